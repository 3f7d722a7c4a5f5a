import { ChatApi } from "./api";
import { ChatApp } from "./app";

// Backend base URL: ?api=http://host:port, defaulting to same-origin.
const params = new URLSearchParams(window.location.search);
const api = new ChatApi(params.get("api") ?? "");

const root = document.getElementById("app");
if (!root) {
  throw new Error("missing #app mount point");
}
const app = new ChatApp(root, api);
void app.start();
