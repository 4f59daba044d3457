import { ReviewApi } from "./api.js";
import { ReviewApp } from "./ui.js";
const root = document.getElementById("app");
if (!root)
    throw new Error("missing #app container");
const app = new ReviewApp(root, new ReviewApi(""));
void app.showSessionList();
