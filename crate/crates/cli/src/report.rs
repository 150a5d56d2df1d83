//! Hand-written SVG panels: flip curves, SRG strips, the pairwise effect
//! matrix and Mean Rank Scores.

use std::fmt::Write;

use xmil_core::explainers::Method;
use xmil_core::faithfulness::{PerturbationRecord, CHUNKS};
use xmil_core::stats::{ComparisonTable, Magnitude};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;
const PALETTE: [&str; 7] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#7f7f7f",
];

fn color(methods: &[Method], m: Method) -> &'static str {
    let i = methods.iter().position(|&x| x == m).unwrap_or(0);
    PALETTE[i % PALETTE.len()]
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Canvas {
    body: String,
    width: f64,
    height: f64,
}

impl Canvas {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut c = Canvas {
            body: String::new(),
            width,
            height,
        };
        c.text(width / 2.0, 24.0, title, "middle", 16.0);
        c
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="{size}">{}</text>"#,
            escape(s)
        );
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.1}" y1="{y1:.1}" x2="{x2:.1}" y2="{y2:.1}" stroke="{stroke}"/>"#
        );
    }

    fn finish(self) -> String {
        format!(
            "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
             <svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
             viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

/// Maps data ranges onto the plotting area.
struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (y0, y1) = if y1 > y0 { (y0, y1) } else { (y0 - 0.5, y0 + 0.5) };
        Axes { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn frame(&self, c: &mut Canvas, x_label: &str, y_label: &str) {
        c.line(PAD, H - PAD, W - PAD, H - PAD, "#000");
        c.line(PAD, PAD, PAD, H - PAD, "#000");
        for (v, y) in [(self.y0, H - PAD), (self.y1, PAD)] {
            c.text(PAD - 6.0, y + 4.0, &format!("{v:.3}"), "end", 10.0);
        }
        c.text(W / 2.0, H - 20.0, x_label, "middle", 12.0);
        c.text(16.0, H / 2.0, y_label, "middle", 12.0);
    }
}

fn finite_range<'a>(vals: impl Iterator<Item = &'a f64>) -> (f64, f64) {
    vals.filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Ascending (dashed) and descending (solid) curves of every method for one
/// bag.
pub fn curve_plot(bag_id: &str, records: &[&PerturbationRecord]) -> String {
    let methods: Vec<Method> = records.iter().map(|r| r.method).collect();
    let (lo, hi) = finite_range(records.iter().flat_map(|r| r.ascending.iter().chain(&r.descending)));
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    let axes = Axes::new(0.0, CHUNKS as f64, lo, hi);
    let mut c = Canvas::new(W + 140.0, H, &format!("Patch flipping: {bag_id}"));
    axes.frame(&mut c, "removed chunks", "tracked output");
    for (k, r) in records.iter().enumerate() {
        let stroke = color(&methods, r.method);
        for (curve, dash) in [(&r.descending, ""), (&r.ascending, r#" stroke-dasharray="5,3""#)] {
            let pts: Vec<String> = curve
                .iter()
                .enumerate()
                .map(|(m, &v)| format!("{:.1},{:.1}", axes.px(m as f64), axes.py(v)))
                .collect();
            let _ = writeln!(
                c.body,
                r#"<polyline class="curve" fill="none" stroke="{stroke}"{dash} points="{}"/>"#,
                pts.join(" ")
            );
        }
        let y = PAD + 18.0 * k as f64;
        c.line(W - 10.0, y, W + 10.0, y, stroke);
        c.text(W + 14.0, y + 4.0, &format!("{} (SRG {:.3})", r.method, r.srg), "start", 11.0);
    }
    c.finish()
}

/// One column of SRG values per method, jittered deterministically.
pub fn srg_strip(methods: &[Method], records: &[PerturbationRecord]) -> String {
    let (lo, hi) = finite_range(records.iter().map(|r| &r.srg));
    let (lo, hi) = if lo.is_finite() { (lo.min(0.0), hi.max(0.0)) } else { (-1.0, 1.0) };
    let axes = Axes::new(-0.5, methods.len() as f64 - 0.5, lo, hi);
    let mut c = Canvas::new(W, H, "SRG per method");
    axes.frame(&mut c, "method", "SRG");
    c.line(PAD, axes.py(0.0), W - PAD, axes.py(0.0), "#bbb");
    for (j, &m) in methods.iter().enumerate() {
        let vals: Vec<f64> = records.iter().filter(|r| r.method == m).map(|r| r.srg).collect();
        for (i, v) in vals.iter().enumerate() {
            let jitter = ((i * 37) % 21) as f64 / 20.0 - 0.5;
            let _ = writeln!(
                c.body,
                r#"<circle class="point" cx="{:.1}" cy="{:.1}" r="2.5" fill="{}" fill-opacity="0.6"/>"#,
                axes.px(j as f64 + 0.3 * jitter),
                axes.py(*v),
                color(methods, m)
            );
        }
        c.text(axes.px(j as f64), H - PAD + 16.0, m.as_str(), "middle", 11.0);
    }
    c.finish()
}

fn effect_fill(r: f64) -> String {
    let a = r.clamp(-1.0, 1.0).abs();
    let fade = (255.0 * (1.0 - a)).round() as u8;
    if r >= 0.0 {
        format!("rgb({fade},{fade},255)")
    } else {
        format!("rgb(255,{fade},{fade})")
    }
}

/// `methods x methods` cells of `r` (row versus column); `*` marks
/// significance, `+`/`++` weak-moderate and strong magnitudes.
pub fn effect_matrix(table: &ComparisonTable) -> String {
    let n = table.methods.len();
    let cell = ((H - 2.0 * PAD) / n.max(1) as f64).min(60.0);
    let mut c = Canvas::new(PAD * 2.0 + cell * n as f64 + 40.0, PAD * 2.0 + cell * n as f64, "Pairwise effect sizes");
    for (i, &a) in table.methods.iter().enumerate() {
        c.text(PAD - 6.0, PAD + cell * (i as f64 + 0.5) + 4.0, a.as_str(), "end", 11.0);
        c.text(PAD + cell * (i as f64 + 0.5), PAD - 6.0, a.as_str(), "middle", 11.0);
        for (j, &b) in table.methods.iter().enumerate() {
            let (x, y) = (PAD + cell * j as f64, PAD + cell * i as f64);
            let pair = if i == j { None } else { table.pair(a, b) };
            let fill = pair.as_ref().map_or("#eee".to_string(), |p| effect_fill(p.r));
            let _ = writeln!(
                c.body,
                r#"<rect class="cell" x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="{fill}" stroke="dimgray"/>"#
            );
            if let Some(p) = pair {
                let mark = match p.magnitude {
                    Magnitude::Negligible => "",
                    Magnitude::WeakModerate => "+",
                    Magnitude::Strong => "++",
                };
                let sig = if p.significant { "*" } else { "" };
                c.text(x + cell / 2.0, y + cell / 2.0 + 4.0, &format!("{:.2}{mark}{sig}", p.r), "middle", 10.0);
            }
        }
    }
    c.finish()
}

/// Mean Rank Score per method; lower is better.
pub fn mrs_bars(table: &ComparisonTable) -> String {
    let n = table.ranks.len();
    let axes = Axes::new(-0.5, n as f64 - 0.5, 0.0, n as f64);
    let mut c = Canvas::new(W, H, "Mean Rank Score (lower is better)");
    axes.frame(&mut c, "method", "MRS");
    for (j, r) in table.ranks.iter().enumerate() {
        let x = axes.px(j as f64 - 0.35);
        let w = axes.px(j as f64 + 0.35) - x;
        let y = axes.py(r.mrs);
        let fill = color(&table.methods, r.method);
        let _ = writeln!(
            c.body,
            r#"<rect class="bar" x="{x:.1}" y="{y:.1}" width="{w:.1}" height="{:.1}" fill="{fill}"/>"#,
            H - PAD - y
        );
        c.text(axes.px(j as f64), y - 4.0, &format!("{:.2}", r.mrs), "middle", 10.0);
        c.text(axes.px(j as f64), H - PAD + 16.0, r.method.as_str(), "middle", 11.0);
    }
    c.finish()
}
