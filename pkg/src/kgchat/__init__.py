"""kgchat: conversational recommendation over incomplete knowledge graphs.

The pipeline treats the dialogue-specific knowledge subgraph as a discrete
latent variable: entity-pair connection probabilities are predicted from the
conversation (prior) or conversation plus target item (posterior), sampled
with Gumbel noise during training, and consumed by both the item recommender
and the knowledge-grounded response generator.
"""

__version__ = "0.1.0"

from kgchat.config import Config
from kgchat.pipeline import Pipeline

__all__ = ["Config", "Pipeline", "__version__"]
