import { connect } from "./ui.js";

const params = new URLSearchParams(window.location.search);
const server = params.get("server") ?? "http://127.0.0.1:8787";

const mount = document.getElementById("app");
if (!mount) throw new Error("missing #app mount point");

void connect(server, mount);
