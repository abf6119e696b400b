//! Two-panel SVG: `alpha_t` with its zero line and key-frame markers on
//! top, `|v|_t` below.

use std::fmt::Write as _;

use cmr_phase::phases::{Phase, PhaseSet};

const WIDTH: f64 = 720.0;
const PANEL: f64 = 200.0;
const GAP: f64 = 50.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;

fn color(p: Phase) -> &'static str {
    match p {
        Phase::Ed => "#1b9e77",
        Phase::Ms => "#d95f02",
        Phase::Es => "#7570b3",
        Phase::Pf => "#e7298a",
        Phase::Md => "#66a61e",
    }
}

struct Panel {
    top: f64,
    lo: f64,
    hi: f64,
    n: usize,
}

impl Panel {
    fn x(&self, t: f64) -> f64 {
        let span = (self.n.max(2) - 1) as f64;
        LEFT + (WIDTH - LEFT - RIGHT) * t / span
    }

    fn y(&self, v: f64) -> f64 {
        self.top + PANEL * (self.hi - v) / (self.hi - self.lo)
    }

    fn frame(&self, s: &mut String, title: &str, ticks: &[f64]) {
        let (x0, x1) = (self.x(0.0), self.x((self.n.max(2) - 1) as f64));
        writeln!(
            s,
            r##"<rect x="{x0:.2}" y="{:.2}" width="{:.2}" height="{PANEL:.2}" fill="none" stroke="#444"/>"##,
            self.top,
            x1 - x0
        )
        .unwrap();
        writeln!(s, r#"<text x="{LEFT:.2}" y="{:.2}" font-size="13">{title}</text>"#, self.top - 8.0).unwrap();
        for &v in ticks {
            writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{v}</text>"#,
                x0 - 6.0,
                self.y(v) + 3.0
            )
            .unwrap();
        }
    }

    fn line(&self, s: &mut String, values: &[f64], stroke: &str) {
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(t, &v)| format!("{:.2},{:.2}", self.x(t as f64), self.y(v)))
            .collect();
        writeln!(s, r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.6"/>"#, pts.join(" ")).unwrap();
    }
}

/// Renders the descriptor; `phases` adds labelled vertical markers.
pub fn descriptor_svg(alpha: &[f64], vnorm: &[f64], phases: Option<&PhaseSet>) -> String {
    let n = alpha.len();
    let height = TOP + 2.0 * PANEL + GAP + 40.0;
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();

    let a = Panel { top: TOP, lo: -1.05, hi: 1.05, n };
    a.frame(&mut s, "alpha_t", &[-1.0, 0.0, 1.0]);
    writeln!(
        s,
        r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
        a.x(0.0),
        a.x((n.max(2) - 1) as f64),
        y = a.y(0.0)
    )
    .unwrap();
    a.line(&mut s, alpha, "#08519c");
    if let Some(ps) = phases {
        for p in Phase::ALL {
            let t = ps.get(p);
            if t >= n {
                continue;
            }
            let x = a.x(t as f64);
            writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}" stroke-width="1.2"/>"#,
                a.top,
                a.top + PANEL,
                c = color(p)
            )
            .unwrap();
            writeln!(
                s,
                r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle" fill="{c}">{}</text>"#,
                a.top + PANEL + 14.0,
                p.name().to_uppercase(),
                c = color(p)
            )
            .unwrap();
        }
    }

    let v = Panel { top: TOP + PANEL + GAP, lo: -0.05, hi: 1.05, n };
    v.frame(&mut s, "|v|_t", &[0.0, 0.5, 1.0]);
    v.line(&mut s, vnorm, "#a50f15");
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">frame</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        v.top + PANEL + 28.0
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markers_and_curves() {
        let alpha: Vec<f64> = (0..10).map(|t| (t as f64 / 3.0).sin()).collect();
        let vnorm = vec![0.5; 10];
        let ps = PhaseSet { t_len: 10, ed: 0, ms: 2, es: 4, pf: 6, md: 8 };
        let svg = descriptor_svg(&alpha, &vnorm, Some(&ps));
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        for label in [">ED<", ">MS<", ">ES<", ">PF<", ">MD<"] {
            assert!(svg.contains(label));
        }
        assert!(!descriptor_svg(&alpha, &vnorm, None).contains(">ED<"));
    }
}
