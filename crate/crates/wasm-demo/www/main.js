import init, { DemoSession, validate_script, reliability, sample_script } from "./pkg/micoach_wasm.js";

const $ = (id) => document.getElementById(id);
let session = null;

function line(cls, who, text) {
  const div = document.createElement("div");
  div.className = "line " + cls;
  if (who) {
    const span = document.createElement("span");
    span.className = "who";
    span.textContent = who + ":";
    div.append(span);
  }
  div.append(text);
  $("log").append(div);
  $("log").scrollTop = $("log").scrollHeight;
}

function render(turn) {
  for (const e of turn.events) {
    switch (e.kind) {
      case "AgentUtterance":
        line("", e.speaker, e.text);
        break;
      case "FailureUtterance":
        line("failure", e.speaker, e.text);
        break;
      case "TraineeUtterance":
        line("trainee", "you", e.text);
        break;
      case "ChoiceMade":
        line("trainee", "you", e.options[0].label);
        break;
      case "SegmentCompleted":
        line("meta", "", "finished " + e.segment);
        break;
      case "SegmentFailed":
        line("meta", "", "let's try that again");
        break;
      case "SessionCompleted":
        line("meta", "", "session complete");
        break;
    }
  }
  const p = turn.progress;
  $("progress").textContent =
    `skills ${p.skills_completed}/${p.skills_total}` + (p.current_skill ? ` · ${p.current_skill}` : "");
  const box = $("options");
  box.replaceChildren();
  for (const o of turn.options) {
    const b = document.createElement("button");
    b.textContent = o.label;
    b.onclick = () => render(JSON.parse(session.choose(o.id)));
    box.append(b);
  }
}

function start() {
  $("log").replaceChildren();
  try {
    session = new DemoSession($("mode").value, $("name").value);
    render(JSON.parse(session.opening()));
  } catch (err) {
    line("failure", "", String(err));
  }
}

function validate() {
  const r = JSON.parse(validate_script($("source").value));
  const out = $("report");
  out.replaceChildren();
  const head = document.createElement("p");
  head.className = r.ok ? "ok" : "err";
  head.textContent = r.ok ? `valid: ${r.script}, ${r.segments} segments` : "invalid";
  out.append(head);
  for (const [kind, list] of [["error", r.errors], ["warning", r.warnings]]) {
    for (const d of list) {
      const p = document.createElement("div");
      p.className = kind === "error" ? "err" : "meta";
      const where = d.segment ? ` ${d.segment}${d.state ? "." + d.state : ""}` : "";
      p.textContent = `${kind} ${d.code} at ${d.line}:${d.column}${where}: ${d.message}`;
      out.append(p);
    }
  }
}

function compute() {
  $("stats").textContent = JSON.stringify(JSON.parse(reliability($("ratings").value)), null, 2);
}

await init();
$("source").value = sample_script();
$("start").onclick = start;
$("validate").onclick = validate;
$("compute").onclick = compute;
