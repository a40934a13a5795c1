// Hash-routed single-page app over the grading service API.
//
//   #/                     exam list
//   #/instructor/<exam>    box editor, mappings, keywords, report
//   #/grade/<exam>/<q>     grading loop for one question
//
// All state lives in the pure modules; this file only wires DOM events
// and re-renders.

import { ApiError, Client } from "./api.js";
import { BoxEditor } from "./boxes.js";
import { GradingSession } from "./grading.js";
import { attentionOrder, rollOptions, unmappedCount } from "./mappings.js";

const root = document.getElementById("root") as HTMLElement;

function el(
  tag: string,
  attrs: Record<string, string> = {},
  ...children: (Node | string)[]
): HTMLElement {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

function getToken(): string {
  let token = localStorage.getItem("gradepipe_token") ?? "";
  if (!token) {
    token = window.prompt("Access token:") ?? "";
    localStorage.setItem("gradepipe_token", token);
  }
  return token;
}

function client(): Client {
  return new Client(getToken());
}

function banner(message: string, kind = "error"): HTMLElement {
  return el("div", { class: `banner ${kind}` }, message);
}

async function guard<T>(work: () => Promise<T>): Promise<T | null> {
  try {
    return await work();
  } catch (err) {
    if (err instanceof ApiError && err.status === 401) {
      localStorage.removeItem("gradepipe_token");
    }
    root.prepend(banner(err instanceof Error ? err.message : String(err)));
    return null;
  }
}

// -- exam list -------------------------------------------------------------

async function renderHome(): Promise<void> {
  root.replaceChildren(el("h1", {}, "gradepipe"));
  const listing = await guard(() => client().listExams());
  if (!listing) return;
  const list = el("ul", { class: "exam-list" });
  for (const exam of listing.exams) {
    const instructorLink = el(
      "a",
      { href: `#/instructor/${exam.exam_id}` },
      `${exam.name || exam.exam_id} (instructor)`,
    );
    const item = el("li", {}, instructorLink);
    list.append(item);
  }
  root.append(list, el("p", { class: "hint" },
    "Graders: open #/grade/<exam>/<question> for an assigned question."));
}

// -- instructor: box editor ---------------------------------------------------

// The API exposes page images per answer bundle but not for the raw
// question paper, so the editor draws a schematic page: boxes to scale
// on a blank surface. Geometry is what the server validates anyway.
const PAGE_SCALE = 0.5;

function renderBoxes(
  editor: BoxEditor,
  pageDims: Record<number, { width: number; height: number }>,
  container: HTMLElement,
  onSave: () => void,
): void {
  container.replaceChildren();
  if (editor.conflict) {
    container.append(banner(
      "Another session changed the questions. Reload to continue.", "error"));
    const reload = el("button", {}, "Reload from server");
    reload.addEventListener("click", () => void onSave());
    container.append(reload);
  }
  const pages = new Map<number, HTMLElement>();
  for (const region of editor.boxes()) {
    let page = pages.get(region.page_index);
    if (!page) {
      page = el("div", { class: "page-canvas" });
      const dims = pageDims[region.page_index];
      if (dims) {
        page.style.width = `${dims.width * PAGE_SCALE}px`;
        page.style.height = `${dims.height * PAGE_SCALE}px`;
      }
      pages.set(region.page_index, page);
    }
    const box = el("div", { class: "qbox", title: region.question_id });
    box.style.left = `${region.x0 * PAGE_SCALE}px`;
    box.style.top = `${region.y0 * PAGE_SCALE}px`;
    box.style.width = `${(region.x1 - region.x0) * PAGE_SCALE}px`;
    box.style.height = `${(region.y1 - region.y0) * PAGE_SCALE}px`;
    box.append(el("span", { class: "qlabel" },
      `${region.question_id} (${region.question_type})`));

    let drag: { x: number; y: number } | null = null;
    box.addEventListener("pointerdown", (event) => {
      drag = { x: event.clientX, y: event.clientY };
      box.setPointerCapture(event.pointerId);
    });
    box.addEventListener("pointermove", (event) => {
      if (!drag) return;
      const dx = (event.clientX - drag.x) / PAGE_SCALE;
      const dy = (event.clientY - drag.y) / PAGE_SCALE;
      drag = { x: event.clientX, y: event.clientY };
      editor.moveBox(region.question_id, dx, dy);
      renderBoxes(editor, pageDims, container, onSave);
    });
    box.addEventListener("pointerup", () => {
      drag = null;
    });
    page.append(box);
  }
  for (const [index, page] of [...pages.entries()].sort((a, b) => a[0] - b[0])) {
    container.append(el("h3", {}, `Page ${index}`), page);
  }

  const violations = editor.overlaps();
  if (violations.length > 0) {
    container.append(banner(
      violations
        .map((v) => `${v.a} overlaps ${v.b} on page ${v.page_index}`)
        .join("; ")));
  }
  const save = el("button", {}, "Save") as HTMLButtonElement;
  save.disabled = !editor.canSave();
  save.addEventListener("click", () => void onSave());
  container.append(save);
}

// -- instructor page -----------------------------------------------------------

async function renderInstructor(examId: string): Promise<void> {
  const api = client();
  const exam = await guard(() => api.getExam(examId));
  if (!exam) return;
  root.replaceChildren(
    el("h1", {}, exam.name || exam.exam_id),
    el("p", {}, exam.grading_open ? "Grading is open." : "Grading not open."),
  );

  const boxSection = el("section", { class: "card" }, el("h2", {}, "Questions"));
  const boxHost = el("div", {});
  boxSection.append(boxHost);
  root.append(boxSection);

  // True page size is server-side; a generous bound keeps drag clamping
  // sensible while the PUT validation stays authoritative.
  const pageDims: Record<number, { width: number; height: number }> = {};
  for (const q of exam.questions) {
    const current = pageDims[q.page_index] ?? { width: 0, height: 0 };
    pageDims[q.page_index] = {
      width: Math.max(current.width, q.x1 + 200),
      height: Math.max(current.height, q.y1 + 200),
    };
  }
  const editor = new BoxEditor(exam.questions, pageDims, exam.questions_version);

  const saveBoxes = async (): Promise<void> => {
    if (editor.conflict) {
      const fresh = await guard(() => api.getQuestions(examId));
      if (fresh) editor.reload(fresh.questions, fresh.version);
      renderBoxes(editor, pageDims, boxHost, saveBoxes);
      return;
    }
    try {
      const body = editor.payload();
      const out = await api.putQuestions(examId, body.base_version, body.questions);
      editor.saved(out.version);
      boxHost.prepend(banner("Saved.", "ok"));
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        editor.markConflict();
      } else {
        boxHost.prepend(banner(err instanceof Error ? err.message : String(err)));
      }
    }
    renderBoxes(editor, pageDims, boxHost, saveBoxes);
  };
  renderBoxes(editor, pageDims, boxHost, saveBoxes);

  const confirm = el("button", {}, "Confirm question set");
  confirm.addEventListener("click", () => {
    void guard(async () => {
      await api.confirmQuestions(examId);
      boxSection.append(banner("Confirmed.", "ok"));
    });
  });
  boxSection.append(confirm);

  await renderMappingsSection(api, examId);
  await renderReportSection(api, examId);
}

async function renderMappingsSection(api: Client, examId: string): Promise<void> {
  const section = el("section", { class: "card" }, el("h2", {}, "Identity mappings"));
  root.append(section);
  const data = await guard(() => api.getMappings(examId));
  if (!data) return;
  const mappings = data.mappings;
  section.append(el("p", {},
    unmappedCount(mappings) === 0
      ? "All sheets mapped."
      : `${unmappedCount(mappings)} sheet(s) need attention.`));
  const roster = mappings
    .filter((m) => m.matched_roll !== null)
    .map((m) => ({ roll: m.matched_roll as string, name: m.matched_name }));
  const table = el("table", { class: "mappings" });
  table.append(el("tr", {},
    el("th", {}, "sheet"), el("th", {}, "read"), el("th", {}, "mapped to"),
    el("th", {}, "distance"), el("th", {}, "status"), el("th", {}, "")));
  for (const m of attentionOrder(mappings)) {
    const select = el("select", {}) as HTMLSelectElement;
    select.append(el("option", { value: "" }, "(unmapped)"));
    for (const option of rollOptions(roster, mappings, m.bundle_id)) {
      const node = el("option", { value: option.roll },
        `${option.roll} ${option.name}`) as HTMLOptionElement;
      node.disabled = option.taken;
      node.selected = option.roll === m.matched_roll;
      select.append(node);
    }
    select.addEventListener("change", () => {
      void guard(async () => {
        await api.putMapping(examId, m.bundle_id, select.value || null);
        await renderInstructor(examId);
      });
    });
    table.append(el("tr", {},
      el("td", {}, m.bundle_id),
      el("td", {}, m.roll_candidate || "(blank)"),
      el("td", {}, m.matched_roll ?? "-"),
      el("td", {}, String(m.edit_distance)),
      el("td", { class: `status-${m.status}` }, m.status),
      el("td", {}, select)));
  }
  section.append(table);
}

async function renderReportSection(api: Client, examId: string): Promise<void> {
  const section = el("section", { class: "card" }, el("h2", {}, "Report"));
  const show = el("button", {}, "Compute report");
  const host = el("div", {});
  show.addEventListener("click", () => {
    void guard(async () => {
      const report = await api.getReport(examId);
      host.replaceChildren();
      const fmt = (v: number | null) => (v === null ? "n/a" : v.toFixed(2));
      host.append(el("p", {},
        `Avg reduction per response: ${fmt(report.summary.avg_reduction_per_response_pct)}%`));
      host.append(el("p", {},
        `Avg reduction per sheet: ${fmt(report.summary.avg_reduction_per_sheet_pct)}%`));
      const table = el("table", {});
      table.append(el("tr", {},
        el("th", {}, "question"), el("th", {}, "type"),
        el("th", {}, "reduction %"), el("th", {}, "n")));
      for (const row of report.per_question) {
        table.append(el("tr", {},
          el("td", {}, row.question_id),
          el("td", {}, row.type),
          el("td", {}, fmt(row.reduction_pct)),
          el("td", {}, `${row.n_hna}/${row.n_h}/${row.n_nh}`)));
      }
      host.append(table);
    });
  });
  const csv = el("a", { href: `/exams/${examId}/events.csv` }, "Download event log");
  section.append(show, host, el("p", {}, csv));
  root.append(section);
}

// -- grader page -----------------------------------------------------------------

async function renderGrader(examId: string, questionId: string): Promise<void> {
  const session = new GradingSession(client(), examId, questionId);
  root.replaceChildren(el("h1", {}, `Grading ${questionId}`));
  const host = el("div", { class: "card grading" });
  root.append(host);

  const draw = (): void => {
    const model = session.renderModel();
    host.replaceChildren();
    if (model.kind === "done") {
      host.append(el("h2", {}, "Queue complete"),
        el("p", {}, `${model.graded_count} responses graded.`));
      return;
    }
    if (model.kind !== "response") {
      host.append(el("p", {}, "Loading..."));
      return;
    }
    host.append(el("p", { class: "hint" },
      `Submission ${model.bundle_id} — ${model.graded_count} done`));
    const img = el("img", {
      src: model.whole_page_open ? model.whole_page_url : model.crop_url,
      class: model.whole_page_open ? "whole-page" : "crop",
    });
    host.append(img);
    const toggle = el("button", {},
      model.whole_page_open ? "Back to answer" : "Whole page");
    toggle.addEventListener("click", () => {
      session.toggleWholePage();
      draw();
    });
    if (model.rubric) host.append(el("p", { class: "rubric" }, model.rubric));
    const score = el("input", {
      type: "number", min: "0", max: String(model.max_score), step: "0.5",
      value: model.score_input, autofocus: "autofocus",
    }) as HTMLInputElement;
    score.addEventListener("input", () => {
      session.setScore(score.value);
    });
    score.addEventListener("keydown", (event) => {
      if (event.key === "Enter") void submit();
    });
    const submitBtn = el("button", { class: "primary" },
      `Submit / ${model.max_score}`);
    submitBtn.addEventListener("click", () => void submit());
    if (model.error) host.append(banner(model.error));
    host.append(el("div", { class: "controls" }, score, submitBtn, toggle));
    score.focus();
  };

  const submit = async (): Promise<void> => {
    await guard(() => session.submit());
    draw();
  };

  await guard(() => session.advance());
  draw();
}

// -- router ------------------------------------------------------------------

async function route(): Promise<void> {
  const hash = window.location.hash || "#/";
  const parts = hash.replace(/^#\//, "").split("/").filter(Boolean);
  if (parts.length === 0) return renderHome();
  if (parts[0] === "instructor" && parts[1]) return renderInstructor(parts[1]);
  if (parts[0] === "grade" && parts[1] && parts[2]) {
    return renderGrader(parts[1], parts[2]);
  }
  return renderHome();
}

window.addEventListener("hashchange", () => void route());
void route();
