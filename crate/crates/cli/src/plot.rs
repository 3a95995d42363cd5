//! Loss curves as standalone SVG.

use std::fmt::Write;

use entroloss::training::EpochRecord;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const TRAIN_COLOR: &str = "#1f77b4";
const VAL_COLOR: &str = "#ff7f0e";
const ONSET_COLOR: &str = "#d62728";

struct Frame {
    x0: f64,
    x1: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, epoch: f64) -> f64 {
        LEFT + (epoch - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, loss: f64) -> f64 {
        HEIGHT - BOTTOM - loss / self.y1 * (HEIGHT - TOP - BOTTOM)
    }
}

/// Training and validation loss against epoch. `onset` is an index into
/// `records`, as returned by `detect_overfitting`; when present a dashed
/// vertical line marks that record's epoch.
pub fn render_loss_svg(records: &[EpochRecord], onset: Option<usize>) -> String {
    let epochs: Vec<f64> = records.iter().map(|r| r.epoch as f64).collect();
    let (mut x0, mut x1) = epochs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if records.is_empty() {
        (x0, x1) = (0.0, 1.0);
    } else if x0 == x1 {
        (x0, x1) = (x0 - 1.0, x1 + 1.0);
    }
    let top = records
        .iter()
        .flat_map(|r| [r.train_loss, r.val_loss])
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let f = Frame {
        x0,
        x1,
        y1: if top > 0.0 { top * 1.05 } else { 1.0 },
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">Training and validation loss</text>"#,
        WIDTH / 2.0
    );

    // Axes.
    let (ax_l, ax_r, ax_t, ax_b) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(
        s,
        r#"<path d="M{ax_l:.2},{ax_t:.2} L{ax_l:.2},{ax_b:.2} L{ax_r:.2},{ax_b:.2}" fill="none" stroke="black"/>"#
    );
    for e in x_ticks(x0, x1) {
        let x = f.x(e);
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{x:.2}" y1="{ax_b:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{e}</text>"#,
            ax_b + 5.0,
            ax_b + 19.0
        );
    }
    for k in 0..=5 {
        let v = f.y1 * k as f64 / 5.0;
        let y = f.y(v);
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{:.2}" y1="{y:.2}" x2="{ax_l:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            ax_l - 5.0,
            ax_l - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">epoch</text>"#,
        (ax_l + ax_r) / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">loss</text>"#,
        (ax_t + ax_b) / 2.0,
        (ax_t + ax_b) / 2.0
    );

    if let Some(r) = onset.and_then(|i| records.get(i).map(|r| (i, r))) {
        let (i, r) = r;
        let x = f.x(r.epoch as f64);
        let _ = writeln!(
            s,
            r#"<line id="overfitting-onset" data-index="{i}" data-epoch="{}" x1="{x:.2}" y1="{ax_t:.2}" x2="{x:.2}" y2="{ax_b:.2}" stroke="{ONSET_COLOR}" stroke-dasharray="6 4"/>"#,
            r.epoch
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" fill="{ONSET_COLOR}">overfitting onset (epoch {})</text>"#,
            x + 4.0,
            ax_t + 14.0,
            r.epoch
        );
    }

    for (class, color, pick) in [
        ("train-loss", TRAIN_COLOR, (|r: &EpochRecord| r.train_loss) as fn(&EpochRecord) -> f64),
        ("val-loss", VAL_COLOR, |r: &EpochRecord| r.val_loss),
    ] {
        let pts: Vec<(f64, f64)> = records.iter().map(|r| (f.x(r.epoch as f64), f.y(pick(r)))).collect();
        let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="{class}" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        for (x, y) in pts {
            let _ = writeln!(s, r#"<circle class="{class}" cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{color}"/>"#);
        }
    }

    // Legend.
    let lx = ax_r - 150.0;
    for (k, (label, color)) in [("training loss", TRAIN_COLOR), ("validation loss", VAL_COLOR)]
        .into_iter()
        .enumerate()
    {
        let y = ax_t + 12.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{label}</text>"#,
            lx + 24.0,
            lx + 30.0,
            y + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// At most about ten integer epoch ticks covering `[x0, x1]`.
fn x_ticks(x0: f64, x1: f64) -> Vec<f64> {
    let step = ((x1 - x0) / 10.0).ceil().max(1.0);
    let first = x0.ceil();
    (0..)
        .map(|k| first + step * k as f64)
        .take_while(|&e| e <= x1)
        .collect()
}
