use std::fmt::Write as _;

const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

pub(crate) fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Tick spacing of 1, 2 or 5 times a power of ten giving about `target` ticks.
fn nice_step(range: f64, target: f64) -> f64 {
    let raw = range / target;
    let mag = 10f64.powf(raw.log10().floor());
    let f = raw / mag;
    let m = if f <= 1.0 {
        1.0
    } else if f <= 2.0 {
        2.0
    } else if f <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

/// Grouped bars with symmetric error bars and an optional label under each
/// group.
#[derive(Debug, Clone)]
pub struct BarChart {
    pub title: String,
    pub y_label: String,
    pub groups: Vec<String>,
    pub series: Vec<String>,
    /// `[group][series] = (height, error)`.
    pub values: Vec<Vec<(f64, f64)>>,
    /// One line of text under each group (e.g. significance stars); may be
    /// empty.
    pub annotations: Vec<String>,
}

impl BarChart {
    pub fn to_svg(&self) -> String {
        let (bar, gap, left, top, plot_h) = (18.0, 22.0, 64.0, 40.0, 220.0);
        let ns = self.series.len().max(1) as f64;
        let group_w = ns * bar + gap;
        let plot_w = group_w * self.groups.len() as f64;
        let legend_w = 20.0 + 7.0 * self.series.iter().map(|s| s.chars().count()).max().unwrap_or(0) as f64;
        let width = left + plot_w + 24.0 + legend_w;
        let height = top + plot_h + 70.0;

        let mut lo = 0f64;
        let mut hi = 0f64;
        for (m, e) in self.values.iter().flatten() {
            lo = lo.min(m - e);
            hi = hi.max(m + e);
        }
        if hi - lo < 1e-12 {
            hi = lo + 1.0;
        }
        let step = nice_step(hi - lo, 5.0);
        let lo = (lo / step).floor() * step;
        let hi = (hi / step).ceil() * step;
        let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            left + plot_w / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<text x="14" y="{:.1}" text-anchor="middle" transform="rotate(-90 14 {:.1})">{}</text>"#,
            top + plot_h / 2.0,
            top + plot_h / 2.0,
            escape(&self.y_label)
        );

        let ticks = ((hi - lo) / step).round() as i64;
        for i in 0..=ticks {
            let v = lo + step * i as f64;
            let v = if v.abs() < step * 1e-9 { 0.0 } else { v };
            let _ = writeln!(
                s,
                r##"<line x1="{left:.1}" y1="{0:.2}" x2="{1:.1}" y2="{0:.2}" stroke="#dddddd"/>"##,
                y(v),
                left + plot_w
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.2}" text-anchor="end">{}</text>"#,
                left - 6.0,
                y(v) + 4.0,
                fmt_tick(v, step)
            );
        }
        let _ = writeln!(
            s,
            r#"<line x1="{left:.1}" y1="{0:.2}" x2="{1:.1}" y2="{0:.2}" stroke="black"/>"#,
            y(0.0),
            left + plot_w
        );

        for (g, name) in self.groups.iter().enumerate() {
            let x0 = left + gap / 2.0 + group_w * g as f64;
            for (k, (m, e)) in self.values[g].iter().enumerate() {
                let x = x0 + bar * k as f64;
                let (y0, y1) = (y(m.max(0.0)), y(m.min(0.0)));
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{y0:.2}" width="{bar:.2}" height="{:.2}" fill="{}"/>"#,
                    y1 - y0,
                    PALETTE[k % PALETTE.len()]
                );
                if *e > 0.0 {
                    let cx = x + bar / 2.0;
                    let (ya, yb) = (y(m + e), y(m - e));
                    let _ = writeln!(
                        s,
                        r#"<path d="M{cx:.2} {ya:.2}V{yb:.2}M{:.2} {ya:.2}H{:.2}M{:.2} {yb:.2}H{:.2}" stroke="black" fill="none"/>"#,
                        cx - 4.0,
                        cx + 4.0,
                        cx - 4.0,
                        cx + 4.0
                    );
                }
            }
            let cx = x0 + ns * bar / 2.0;
            let _ = writeln!(
                s,
                r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                top + plot_h + 16.0,
                escape(name)
            );
            if let Some(a) = self.annotations.get(g).filter(|a| !a.is_empty()) {
                let _ = writeln!(
                    s,
                    r#"<text x="{cx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                    top + plot_h + 34.0,
                    escape(a)
                );
            }
        }

        let lx = left + plot_w + 24.0;
        for (k, name) in self.series.iter().enumerate() {
            let ly = top + 16.0 * k as f64;
            let _ = writeln!(
                s,
                r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/>"#,
                PALETTE[k % PALETTE.len()]
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                lx + 14.0,
                ly + 9.0,
                escape(name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

/// Square matrix of values in `[0, 1]`, rows are sources and columns targets.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub title: String,
    pub labels: Vec<String>,
    /// `[row][col]`.
    pub values: Vec<Vec<f64>>,
}

impl Heatmap {
    pub fn to_svg(&self) -> String {
        let n = self.labels.len();
        let cell = 40.0;
        let label_w = 12.0 + 7.0 * self.labels.iter().map(|s| s.chars().count()).max().unwrap_or(0) as f64;
        let (left, top) = (label_w + 20.0, 50.0 + label_w);
        let width = left + cell * n as f64 + 20.0;
        let height = top + cell * n as f64 + 40.0;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
            width / 2.0,
            escape(&self.title)
        );
        for (i, name) in self.labels.iter().enumerate() {
            let c = cell * i as f64 + cell / 2.0;
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                left - 6.0,
                top + c + 4.0,
                escape(name)
            );
            let (tx, ty) = (left + c + 4.0, top - 6.0);
            let _ = writeln!(
                s,
                r#"<text x="{tx:.1}" y="{ty:.1}" transform="rotate(-90 {tx:.1} {ty:.1})">{}</text>"#,
                escape(name)
            );
        }
        for (r, row) in self.values.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                let v = v.clamp(0.0, 1.0);
                let (x, y) = (left + cell * c as f64, top + cell * r as f64);
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.1}" y="{y:.1}" width="{cell:.1}" height="{cell:.1}" fill="{}" stroke="white"/>"#,
                    blues(v)
                );
                let ink = if v > 0.5 { "white" } else { "black" };
                let _ = writeln!(
                    s,
                    r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="{ink}" font-size="10">{v:.2}</text>"#,
                    x + cell / 2.0,
                    y + cell / 2.0 + 4.0
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">source (row) to target (column)</text>"#,
            left + cell * n as f64 / 2.0,
            height - 14.0
        );
        s.push_str("</svg>\n");
        s
    }
}

/// White to dark blue.
fn blues(v: f64) -> String {
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(247.0, 8.0), lerp(251.0, 48.0), lerp(255.0, 107.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round() {
        assert_eq!(nice_step(1.0, 5.0), 0.2);
        assert_eq!(nice_step(0.3, 5.0), 0.1);
        assert_eq!(nice_step(70.0, 5.0), 20.0);
        assert_eq!(fmt_tick(0.2, 0.1), "0.2");
        assert_eq!(fmt_tick(20.0, 20.0), "20");
    }

    #[test]
    fn labels_are_escaped() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
        let chart = BarChart {
            title: "x<y".into(),
            y_label: "r".into(),
            groups: vec!["V1".into()],
            series: vec!["s&t".into()],
            values: vec![vec![(0.3, 0.05)]],
            annotations: vec!["***".into()],
        };
        let svg = chart.to_svg();
        assert!(svg.contains("x&lt;y") && svg.contains("s&amp;t") && svg.contains("***"));
        assert!(!svg.contains("s&t"));
    }

    #[test]
    fn color_scale_ends() {
        assert_eq!(blues(0.0), "#f7fbff");
        assert_eq!(blues(1.0), "#08306b");
    }
}
