/**
 * Browser entry point. Query parameters:
 *   ?user=N      user binding for outgoing events (default 1)
 *   ?server=URL  WebSocket endpoint (default ws://<this host>/panel)
 */

import { createPanel } from "./panel.js";

const params = new URLSearchParams(window.location.search);
const user = Number(params.get("user") ?? "1");
const url = params.get("server") ?? `ws://${window.location.host}/panel`;

const root = document.getElementById("app");
if (root === null) {
  throw new Error("missing #app element");
}
createPanel(root, { user: Number.isInteger(user) && user > 0 ? user : 1, url });
