import init, { Demo } from "./pkg/ckm_web.js";

const $ = (id) => document.getElementById(id);
let demo = null;

function paint(canvas, rgba) {
  const img = new ImageData(new Uint8ClampedArray(rgba), demo.width(), demo.height());
  canvas.width = demo.width();
  canvas.height = demo.height();
  canvas.getContext("2d").putImageData(img, 0, 0);
}

function report(el, f) {
  try {
    f();
  } catch (e) {
    el.textContent = String(e);
  }
}

function generate() {
  report($("rmse"), () => {
    demo = new Demo(Number($("seed").value));
    paint($("scene"), demo.layer($("layer").value));
    $("rmse").textContent = "";
    $("summary").textContent = "";
  });
}

function complete() {
  report($("rmse"), () => {
    $("rmse").textContent = demo.complete($("method").value, Number($("stride").value));
    paint($("done_gain"), demo.layer("done_pgm1"));
    paint($("done_angle"), demo.layer("done_pam1"));
  });
}

function similarity() {
  report($("summary"), () => {
    const [mean, median, min, above, pixels] = demo.similarity(Number($("antennas").value));
    paint($("cosine"), demo.layer("cosine"));
    $("summary").textContent =
      `mean ${mean.toFixed(4)}  median ${median.toFixed(4)}  min ${min.toFixed(4)}\n` +
      `fraction above 0.8: ${above.toFixed(3)} of ${pixels} pixels`;
  });
}

function plotSpectrum(event) {
  const c = $("cosine");
  const rect = c.getBoundingClientRect();
  const col = Math.floor(((event.clientX - rect.left) / rect.width) * demo.width());
  const row = Math.floor(((event.clientY - rect.top) / rect.height) * demo.height());
  report($("summary"), () => {
    const s = demo.spectrum(row, col, Number($("antennas").value));
    const canvas = $("spectrum");
    const g = canvas.getContext("2d");
    g.clearRect(0, 0, canvas.width, canvas.height);
    if (s.length === 0) {
      g.fillText(`pixel (${row}, ${col}) is a building or uncovered`, 10, 20);
      return;
    }
    const n = s.length / 2;
    const floor = -60;
    [["black", 0], ["red", n]].forEach(([color, start]) => {
      g.strokeStyle = color;
      g.beginPath();
      for (let i = 0; i < n; i++) {
        const x = (i / (n - 1)) * canvas.width;
        const y = (Math.max(s[start + i], floor) / floor) * (canvas.height - 20) + 10;
        i === 0 ? g.moveTo(x, y) : g.lineTo(x, y);
      }
      g.stroke();
    });
    g.fillStyle = "black";
    g.fillText(`pixel (${row}, ${col}), 0 to 180 deg, 0 to ${floor} dB`, 10, canvas.height - 4);
  });
}

await init();
$("generate").onclick = generate;
$("layer").onchange = () => demo && paint($("scene"), demo.layer($("layer").value));
$("complete").onclick = complete;
$("similarity").onclick = similarity;
$("cosine").onclick = plotSpectrum;
generate();
