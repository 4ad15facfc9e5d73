use std::fmt::Write as _;

const PALETTE: [&str; 6] = ["#000000", "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Eigenvalue curves on a log-y, index-x plot. Non-positive values are
/// dropped from each polyline.
pub fn eigen_curves(title: &str, series: &[(&str, &[f64])]) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 420.0, 70.0, 150.0, 36.0, 44.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let len = series.iter().map(|s| s.1.len()).max().unwrap_or(1).max(2);
    let positive = || series.iter().flat_map(|s| s.1.iter().copied()).filter(|v| *v > 0.0 && v.is_finite());
    let hi = positive().fold(f64::MIN, f64::max);
    let lo = positive().fold(f64::MAX, f64::min);
    let (lo_dec, hi_dec) = if hi >= lo {
        (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0))
    } else {
        (0.0, 1.0)
    };
    let x = |i: usize| left + pw * i as f64 / (len - 1) as f64;
    let y = |v: f64| top + ph * (hi_dec - v.log10()) / (hi_dec - lo_dec);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#888"/>"##
    );
    let step = ((hi_dec - lo_dec) / 8.0).ceil().max(1.0);
    let mut dec = lo_dec;
    while dec <= hi_dec {
        let yy = y(10f64.powf(dec));
        let _ = writeln!(
            s,
            r##"<line x1="{left}" x2="{}" y1="{yy}" y2="{yy}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">1e{dec}</text>"##,
            left + pw,
            left - 6.0,
            yy + 4.0
        );
        dec += step;
    }
    let tick = ((len as f64 / 6.0).ceil() as usize).max(1);
    for i in (0..len).step_by(tick) {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x(i),
            top + ph + 16.0,
            i + 1
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">index i</text>"#,
        left + pw / 2.0,
        h - 8.0
    );
    for (k, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0 && v.is_finite())
            .map(|(i, v)| format!("{:.2},{:.2}", x(i), y(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 14.0 + 16.0 * k as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drops_nonpositive_points() {
        let svg = eigen_curves("t", &[("a", &[1.0, 0.1, 0.0, -1.0])]);
        assert!(svg.starts_with("<svg"));
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        assert_eq!(line.matches(',').count(), 2);
    }
}
