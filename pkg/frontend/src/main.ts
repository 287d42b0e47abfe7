// Bootstrap: the one configuration value is the API base URL, taken from the
// ?api= query parameter and defaulting to same-origin (the bundle is served
// by the annotation server itself in that case).

import { AnnoClient } from "./api.js";
import { AnnotatorApp } from "./app.js";

const baseUrl = new URLSearchParams(window.location.search).get("api") ?? "";
const root = document.getElementById("app");
if (root) {
  void new AnnotatorApp(new AnnoClient(baseUrl), root).start();
}
