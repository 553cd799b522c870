//! Self-contained static SVG line charts, no external assets.

/// One plotted series.
pub struct Series<'a> {
    pub name: String,
    pub color: &'a str,
    /// (x, y) points in data coordinates.
    pub points: Vec<(f64, f64)>,
}

pub struct Panel<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
    /// Dashed vertical marker, in x data coordinates.
    pub vline: Option<(f64, &'a str)>,
}

const PANEL_W: f64 = 460.0;
const PANEL_H: f64 = 320.0;
const MARGIN_L: f64 = 52.0;
const MARGIN_R: f64 = 14.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 40.0;

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn panel_svg(p: &Panel, x0: f64) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in &p.series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    if let Some((vx, _)) = p.vline {
        xs.push(vx);
    }
    let (xmin, xmax) = bounds(&xs);
    let (ymin, ymax) = bounds(&ys);
    let ymin = ymin.min(0.0);
    let plot_w = PANEL_W - MARGIN_L - MARGIN_R;
    let plot_h = PANEL_H - MARGIN_T - MARGIN_B;
    let sx = move |x: f64| x0 + MARGIN_L + (x - xmin) / (xmax - xmin).max(1e-12) * plot_w;
    let sy = move |y: f64| MARGIN_T + plot_h - (y - ymin) / (ymax - ymin).max(1e-12) * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<rect x=\"{:.1}\" y=\"{MARGIN_T}\" width=\"{plot_w:.1}\" height=\"{plot_h:.1}\" fill=\"none\" stroke=\"#999\"/>\n",
        x0 + MARGIN_L
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"18\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n",
        x0 + MARGIN_L + plot_w / 2.0,
        esc(p.title)
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
        x0 + MARGIN_L + plot_w / 2.0,
        PANEL_H - 8.0,
        esc(p.x_label)
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"11\" text-anchor=\"middle\" transform=\"rotate(-90 {:.1} {:.1})\">{}</text>\n",
        x0 + 14.0,
        MARGIN_T + plot_h / 2.0,
        x0 + 14.0,
        MARGIN_T + plot_h / 2.0,
        esc(p.y_label)
    ));
    // axis ticks: min and max
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\n",
        x0 + MARGIN_L - 4.0,
        sy(ymax) + 4.0,
        ymax
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"end\">{:.3}</text>\n",
        x0 + MARGIN_L - 4.0,
        sy(ymin) + 4.0,
        ymin
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{:.0}</text>\n",
        sx(xmin),
        MARGIN_T + plot_h + 14.0,
        xmin
    ));
    out.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{:.0}</text>\n",
        sx(xmax),
        MARGIN_T + plot_h + 14.0,
        xmax
    ));
    if let Some((vx, label)) = p.vline {
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{MARGIN_T}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#444\" stroke-dasharray=\"5,4\"/>\n",
            sx(vx),
            sx(vx),
            MARGIN_T + plot_h
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            sx(vx),
            MARGIN_T - 4.0,
            esc(label)
        ));
    }
    for (i, s) in p.series.iter().enumerate() {
        if s.points.is_empty() {
            continue;
        }
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            s.color,
            pts.join(" ")
        ));
        let ly = MARGIN_T + 14.0 + 14.0 * i as f64;
        out.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            x0 + MARGIN_L + 6.0,
            x0 + MARGIN_L + 26.0,
            s.color
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-size=\"10\">{}</text>\n",
            x0 + MARGIN_L + 30.0,
            ly + 3.0,
            esc(&s.name)
        ));
    }
    out
}

fn bounds(vals: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in vals {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Render one or more panels side by side into a standalone SVG.
pub fn render(panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len() as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{PANEL_H:.0}\" viewBox=\"0 0 {width:.0} {PANEL_H:.0}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    );
    for (i, p) in panels.iter().enumerate() {
        out.push_str(&panel_svg(p, PANEL_W * i as f64));
    }
    out.push_str("</svg>\n");
    out
}

/// Trailing moving average used for the plotted smoothed curves.
pub fn moving_average(points: &[(f64, f64)], window: usize) -> Vec<(f64, f64)> {
    let w = window.max(1);
    points
        .iter()
        .enumerate()
        .map(|(i, &(x, _))| {
            let lo = i + 1 - w.min(i + 1);
            let mean = points[lo..=i].iter().map(|&(_, y)| y).sum::<f64>() / (i - lo + 1) as f64;
            (x, mean)
        })
        .collect()
}

/// Minimal XML well-formedness check (tag balance), used by tests.
pub fn xml_is_balanced(text: &str) -> bool {
    let mut stack: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('<') {
        let Some(end_rel) = rest[start..].find('>') else {
            return false;
        };
        let tag = &rest[start + 1..start + end_rel];
        rest = &rest[start + end_rel + 1..];
        if tag.starts_with('?') || tag.starts_with('!') {
            continue;
        }
        if let Some(name) = tag.strip_prefix('/') {
            match stack.pop() {
                Some(open) if open == name.trim() => {}
                _ => return false,
            }
        } else if tag.ends_with('/') {
            continue;
        } else {
            let name = tag.split_whitespace().next().unwrap_or("");
            stack.push(name.to_string());
        }
    }
    stack.is_empty()
}
