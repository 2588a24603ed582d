import init, { param_schema, grade_rgba, histogram_rgba, bake_cube } from "./pkg/paramgrade_web.js";

const BINS = 64;
const view = document.getElementById("view");
const hist = document.getElementById("hist");
const errorBox = document.getElementById("error");
let schema = [];
let source = null;
let pending = false;

function currentParams() {
  const p = {};
  for (const s of schema) p[s.name] = Number(document.getElementById(s.name).value);
  return JSON.stringify(p);
}

function buildSliders() {
  const box = document.getElementById("sliders");
  for (const s of schema) {
    const step = (s.max - s.min) / 200;
    box.insertAdjacentHTML("beforeend",
      `<label><span class="row"><span>${s.name}</span><output id="${s.name}-v">${s.identity}</output></span>
       <input type="range" id="${s.name}" min="${s.min}" max="${s.max}" step="${step}" value="${s.identity}"></label>`);
    document.getElementById(s.name).addEventListener("input", (e) => {
      document.getElementById(`${s.name}-v`).textContent = Number(e.target.value).toFixed(3);
      schedule();
    });
  }
}

function schedule() {
  if (pending) return;
  pending = true;
  requestAnimationFrame(() => { pending = false; render(); });
}

function drawHistogram(values) {
  const ctx = hist.getContext("2d");
  ctx.clearRect(0, 0, hist.width, hist.height);
  ctx.globalCompositeOperation = "lighter";
  const colours = ["#f33", "#3f3", "#36f"];
  const peak = Math.max(...values);
  const w = hist.width / BINS;
  for (let c = 0; c < 3; c++) {
    ctx.fillStyle = colours[c];
    for (let j = 0; j < BINS; j++) {
      const h = (values[c * BINS + j] / peak) * hist.height;
      ctx.fillRect(j * w, hist.height - h, w - 1, h);
    }
  }
  ctx.globalCompositeOperation = "source-over";
}

function render() {
  if (!source) return;
  try {
    const graded = grade_rgba(source.data, source.width, source.height, currentParams());
    view.getContext("2d").putImageData(new ImageData(new Uint8ClampedArray(graded), source.width, source.height), 0, 0);
    drawHistogram(histogram_rgba(graded, source.width, source.height, BINS));
    errorBox.textContent = "";
  } catch (e) {
    errorBox.textContent = String(e);
  }
}

async function load(url) {
  const img = new Image();
  img.src = url;
  await img.decode();
  view.width = img.naturalWidth;
  view.height = img.naturalHeight;
  const ctx = view.getContext("2d");
  ctx.drawImage(img, 0, 0);
  source = ctx.getImageData(0, 0, view.width, view.height);
  render();
}

document.getElementById("file").addEventListener("change", (e) => {
  const f = e.target.files[0];
  if (f) load(URL.createObjectURL(f));
});

document.getElementById("reset").addEventListener("click", () => {
  for (const s of schema) {
    document.getElementById(s.name).value = s.identity;
    document.getElementById(`${s.name}-v`).textContent = s.identity;
  }
  render();
});

document.getElementById("export").addEventListener("click", () => {
  try {
    const text = bake_cube(currentParams(), Number(document.getElementById("size").value));
    const a = document.createElement("a");
    a.href = URL.createObjectURL(new Blob([text], { type: "text/plain" }));
    a.download = "grade.cube";
    a.click();
    URL.revokeObjectURL(a.href);
  } catch (e) {
    errorBox.textContent = String(e);
  }
});

await init();
schema = JSON.parse(param_schema());
buildSliders();
load("sample.png");
