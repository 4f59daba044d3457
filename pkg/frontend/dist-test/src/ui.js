import { ApiError } from "./api.js";
import { decodePgm } from "./pgm.js";
import { submitVerdictOptimistic } from "./optimistic.js";
import { canFinalize, cycleVerdict, keyToVerdict, verdictLabel } from "./verdict.js";
/** Single-page review app: a session list and a per-session montage view.
 * Verdicts cycle on row click (or t/f/u with arrow navigation); the
 * server response always wins over any local projection. */
export class ReviewApp {
    constructor(root, api) {
        this.root = root;
        this.api = api;
        this.detail = null;
        this.selectedRow = 0;
        this.level = 50;
        this.width = 400;
        document.addEventListener("keydown", (e) => this.onKey(e));
    }
    async showSessionList() {
        this.detail = null;
        const sessions = await this.api.listSessions();
        this.root.innerHTML = "";
        this.root.appendChild(el("h1", {}, "Candidate review"));
        const table = el("table", { class: "sessions" });
        table.appendChild(el("tr", {}, ...["session", "study", "status", "reviewed"].map((h) => el("th", {}, h))));
        for (const s of sessions) {
            const row = el("tr", { class: `status-${s.status}` }, el("td", {}, s.session_id), el("td", {}, s.study_id), el("td", {}, s.status), el("td", {}, `${s.n_reviewed}/${s.n_candidates}`));
            row.addEventListener("click", () => void this.showSession(s.session_id));
            table.appendChild(row);
        }
        this.root.appendChild(table);
        this.root.appendChild(this.reportFooter(sessions));
    }
    reportFooter(sessions) {
        const open = sessions.filter((s) => s.status === "open").length;
        const footer = el("div", { class: "footer" });
        if (open > 0) {
            footer.textContent = `${open} session(s) still open — labor report available once all are closed`;
            return footer;
        }
        void this.api.report().then((rep) => {
            footer.textContent =
                `labor: ${rep.total_minutes.toFixed(0)} min vs ` +
                    `${rep.baseline_minutes.toFixed(0)} min all-manual — ` +
                    `savings ${(rep.savings_fraction * 100).toFixed(1)}%`;
        }).catch((err) => {
            footer.textContent = err instanceof ApiError ? err.message : String(err);
        });
        return footer;
    }
    async showSession(id) {
        this.detail = await this.api.getSession(id);
        this.selectedRow = 0;
        this.renderSession();
        await this.loadMontage();
    }
    renderSession() {
        const d = this.detail;
        if (!d)
            return;
        this.root.innerHTML = "";
        const back = el("a", { href: "#" }, "← sessions");
        back.addEventListener("click", (e) => {
            e.preventDefault();
            void this.showSessionList();
        });
        this.root.appendChild(el("div", { class: "topbar" }, back, el("h1", {}, `${d.session_id} (${d.study_id})`), el("span", { class: `status-${d.status}` }, d.status)));
        this.root.appendChild(el("div", { id: "notice", class: "notice" }));
        const main = el("div", { class: "main" });
        main.appendChild(this.montagePane());
        main.appendChild(this.rowsPane());
        this.root.appendChild(main);
        const finalize = el("button", { id: "finalize" }, d.status === "open" ? "Finalize session" : `Session ${d.status}`);
        finalize.disabled = !canFinalize(d);
        finalize.addEventListener("click", () => void this.finalize());
        this.root.appendChild(el("div", { class: "actions" }, finalize, el("span", { class: "hint" }, "click a row (or t/f/u with ↑↓) to set verdicts; click cycles " +
            "unreviewed → true → false")));
    }
    montagePane() {
        const pane = el("div", { class: "montage-pane" });
        pane.appendChild(el("canvas", { id: "montage" }));
        const controls = el("div", { class: "window-controls" });
        controls.appendChild(el("label", {}, `level ${this.level}`));
        const level = el("input", {
            type: "range", min: "-200", max: "400", value: String(this.level),
        });
        controls.appendChild(level);
        controls.appendChild(el("label", {}, `width ${this.width}`));
        const width = el("input", {
            type: "range", min: "10", max: "2000", value: String(this.width),
        });
        controls.appendChild(width);
        const rewindow = () => {
            this.level = Number(level.value);
            this.width = Math.max(1, Number(width.value));
            void this.loadMontage();
            controls.children[0].textContent = `level ${this.level}`;
            controls.children[2].textContent = `width ${this.width}`;
        };
        level.addEventListener("change", rewindow);
        width.addEventListener("change", rewindow);
        pane.appendChild(controls);
        return pane;
    }
    rowsPane() {
        const d = this.detail;
        const pane = el("div", { class: "rows-pane" });
        d.candidates.forEach((c, i) => {
            const row = el("div", {
                class: "cand-row" + (i === this.selectedRow ? " selected" : ""),
                "data-cid": c.candidate_id,
            });
            row.appendChild(el("span", { class: "cid" }, c.candidate_id));
            row.appendChild(el("span", { class: "meta" }, `${c.phase} score ${c.score.toFixed(2)} z ${c.key_z}`));
            row.appendChild(el("span", { class: `verdict v-${c.verdict}` }, verdictLabel(c.verdict)));
            row.addEventListener("click", () => {
                this.selectedRow = i;
                void this.setVerdict(c.candidate_id, cycleVerdict(c.verdict));
            });
            const yes = el("button", { class: "mini" }, "true");
            yes.addEventListener("click", (e) => {
                e.stopPropagation();
                this.selectedRow = i;
                void this.setVerdict(c.candidate_id, "true_positive");
            });
            const no = el("button", { class: "mini" }, "false");
            no.addEventListener("click", (e) => {
                e.stopPropagation();
                this.selectedRow = i;
                void this.setVerdict(c.candidate_id, "false_positive");
            });
            row.appendChild(yes);
            row.appendChild(no);
            pane.appendChild(row);
        });
        return pane;
    }
    async loadMontage() {
        const d = this.detail;
        if (!d || d.candidates.length === 0)
            return;
        try {
            const buf = await this.api.fetchMontage(d.session_id, this.level, this.width);
            const img = decodePgm(buf);
            const canvas = this.root.querySelector("#montage");
            if (!canvas)
                return;
            canvas.width = img.width;
            canvas.height = img.height;
            const ctx = canvas.getContext("2d");
            const rgba = ctx.createImageData(img.width, img.height);
            for (let i = 0; i < img.pixels.length; i++) {
                const v = img.pixels[i];
                rgba.data[4 * i] = v;
                rgba.data[4 * i + 1] = v;
                rgba.data[4 * i + 2] = v;
                rgba.data[4 * i + 3] = 255;
            }
            ctx.putImageData(rgba, 0, 0);
        }
        catch (err) {
            this.notice(err instanceof Error ? err.message : String(err));
        }
    }
    async setVerdict(candidateId, verdict) {
        if (!this.detail)
            return;
        const outcome = await submitVerdictOptimistic(this.api, this.detail, candidateId, verdict, (d) => {
            this.detail = d;
            this.renderSession();
            void this.loadMontage();
        });
        this.detail = outcome.detail;
        if (outcome.notice)
            this.notice(outcome.notice);
    }
    async finalize() {
        if (!this.detail)
            return;
        try {
            this.detail = await this.api.finalize(this.detail.session_id);
            this.renderSession();
            await this.loadMontage();
            this.notice(this.detail.status === "needs_manual"
                ? "no true positives — study needs manual annotation"
                : "session finalized");
        }
        catch (err) {
            this.notice(err instanceof Error ? err.message : String(err));
        }
    }
    onKey(e) {
        const d = this.detail;
        if (!d || d.candidates.length === 0)
            return;
        if (e.key === "ArrowDown" || e.key === "ArrowUp") {
            const step = e.key === "ArrowDown" ? 1 : -1;
            this.selectedRow = Math.min(Math.max(this.selectedRow + step, 0), d.candidates.length - 1);
            this.renderSession();
            void this.loadMontage();
            e.preventDefault();
            return;
        }
        const verdict = keyToVerdict(e.key);
        if (verdict !== null) {
            const cand = d.candidates[this.selectedRow];
            void this.setVerdict(cand.candidate_id, verdict);
        }
    }
    notice(text) {
        const box = this.root.querySelector("#notice");
        if (box)
            box.textContent = text;
    }
}
function el(tag, attrs = {}, ...children) {
    const node = document.createElement(tag);
    for (const [k, v] of Object.entries(attrs))
        node.setAttribute(k, v);
    for (const child of children) {
        node.append(typeof child === "string" ? document.createTextNode(child) : child);
    }
    return node;
}
