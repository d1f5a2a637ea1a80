//! Dependency-light figure rendering. Every chart is built from
//! exactly two SVG primitives — rectangles and polylines — so the
//! output stays trivial to parse, diff, and embed. Axis numbers live
//! in the CSV companions, not in the figures.

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 48.0;

const FRAME: &str = "#444444";
const GRID: &str = "#dddddd";
const SERIES: [&str; 2] = ["#1f6fb2", "#c24f1f"];
const POSITIVE: &str = "#b2421f";
const NEGATIVE: &str = "#1f6fb2";

fn document(body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n{body}</svg>\n"
    )
}

fn rect(x: f64, y: f64, w: f64, h: f64, fill: &str) -> String {
    format!("<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" fill=\"{fill}\"/>\n")
}

fn polyline(points: &[(f64, f64)], stroke: &str) -> String {
    let coords: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"{stroke}\" stroke-width=\"1.5\"/>\n",
        coords.join(" ")
    )
}

/// Map unit-square data coordinates to pixels (y grows upward in data).
fn to_pixel(x: f64, y: f64) -> (f64, f64) {
    let px = MARGIN + x * (WIDTH - 2.0 * MARGIN);
    let py = HEIGHT - MARGIN - y * (HEIGHT - 2.0 * MARGIN);
    (px, py)
}

fn chrome() -> String {
    let mut body = rect(0.0, 0.0, WIDTH, HEIGHT, "#ffffff");
    // Gridlines as hairline rectangles every quarter of the plot area.
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (gx, gy) = to_pixel(t, t);
        body.push_str(&rect(gx, MARGIN, 1.0, HEIGHT - 2.0 * MARGIN, GRID));
        body.push_str(&rect(MARGIN, gy, WIDTH - 2.0 * MARGIN, 1.0, GRID));
    }
    // Frame: four edge rectangles.
    body.push_str(&rect(MARGIN, MARGIN, WIDTH - 2.0 * MARGIN, 1.5, FRAME));
    body.push_str(&rect(MARGIN, HEIGHT - MARGIN, WIDTH - 2.0 * MARGIN, 1.5, FRAME));
    body.push_str(&rect(MARGIN, MARGIN, 1.5, HEIGHT - 2.0 * MARGIN, FRAME));
    body.push_str(&rect(WIDTH - MARGIN, MARGIN, 1.5, HEIGHT - 2.0 * MARGIN, FRAME));
    body
}

/// Unit-square curves (ROC, PR). `diagonal` adds the chance reference.
pub fn curve_chart(series: &[&[(f64, f64)]], diagonal: bool) -> String {
    let mut body = chrome();
    if diagonal {
        let line: Vec<(f64, f64)> = vec![to_pixel(0.0, 0.0), to_pixel(1.0, 1.0)];
        body.push_str(&polyline(&line, GRID));
    }
    for (i, points) in series.iter().enumerate() {
        let pixels: Vec<(f64, f64)> = points.iter().map(|&(x, y)| to_pixel(x, y)).collect();
        body.push_str(&polyline(&pixels, SERIES[i % SERIES.len()]));
    }
    document(&body)
}

/// Horizontal bars for non-negative magnitudes, first value on top.
pub fn bar_chart(values: &[f64]) -> String {
    let mut body = chrome();
    let max = values.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let rows = values.len().max(1) as f64;
    let band = (HEIGHT - 2.0 * MARGIN) / rows;
    for (i, &v) in values.iter().enumerate() {
        let w = (v / max).max(0.0) * (WIDTH - 2.0 * MARGIN);
        let y = MARGIN + i as f64 * band + 0.15 * band;
        body.push_str(&rect(MARGIN, y, w, 0.7 * band, SERIES[0]));
    }
    document(&body)
}

/// Low-to-high value shade: blue for 0, red for 1.
fn value_shade(v: f64) -> String {
    let t = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("rgb({},{},{})", lerp(59.0, 180.0), lerp(76.0, 4.0), lerp(192.0, 38.0))
}

/// Attribution summary: one horizontal band per feature (top row
/// first), each point a small square at x = attribution, vertical
/// offset and shade both encoding the normalized feature value.
pub fn summary_chart(rows: &[Vec<(f64, f64)>]) -> String {
    let span = rows
        .iter()
        .flatten()
        .map(|&(phi, _)| phi.abs())
        .fold(1e-12, f64::max);
    let mut body = chrome();
    let bands = rows.len().max(1) as f64;
    let band = (HEIGHT - 2.0 * MARGIN) / bands;
    // Zero line.
    let (zx, _) = to_pixel(0.5, 0.0);
    body.push_str(&rect(zx, MARGIN, 1.0, HEIGHT - 2.0 * MARGIN, FRAME));
    for (i, points) in rows.iter().enumerate() {
        let center = MARGIN + (i as f64 + 0.5) * band;
        for &(phi, value) in points {
            let x = MARGIN + (phi / span / 2.0 + 0.5) * (WIDTH - 2.0 * MARGIN);
            let y = center + (value - 0.5) * band * 0.7;
            body.push_str(&rect(x - 1.5, y - 1.5, 3.0, 3.0, &value_shade(value)));
        }
    }
    document(&body)
}

/// One prediction decomposed into ordered attribution steps: a bar per
/// step from the running total to its new value, positive pushes in
/// warm, negative in cool, connected by hairline rectangles.
pub fn waterfall_chart(base: f64, contributions: &[f64], final_margin: f64) -> String {
    let mut lo = base.min(final_margin);
    let mut hi = base.max(final_margin);
    let mut cumulative = base;
    for &c in contributions {
        cumulative += c;
        lo = lo.min(cumulative);
        hi = hi.max(cumulative);
    }
    let pad = 0.05 * (hi - lo).max(1e-9);
    let (lo, hi) = (lo - pad, hi + pad);
    let scale = |v: f64| MARGIN + (v - lo) / (hi - lo) * (WIDTH - 2.0 * MARGIN);

    let mut body = chrome();
    let rows = (contributions.len() + 1).max(1) as f64;
    let band = (HEIGHT - 2.0 * MARGIN) / rows;
    // Base reference line.
    body.push_str(&rect(scale(base), MARGIN, 1.0, HEIGHT - 2.0 * MARGIN, FRAME));

    let mut cumulative = base;
    for (i, &c) in contributions.iter().enumerate() {
        let (from, to) = (cumulative, cumulative + c);
        cumulative = to;
        let y = MARGIN + i as f64 * band + 0.2 * band;
        let (x0, x1) = (scale(from.min(to)), scale(from.max(to)));
        let fill = if c >= 0.0 { POSITIVE } else { NEGATIVE };
        body.push_str(&rect(x0, y, (x1 - x0).max(1.0), 0.6 * band, fill));
        // Connector down to the next row.
        body.push_str(&rect(scale(to), y + 0.6 * band, 1.0, 0.4 * band, FRAME));
    }
    // Final margin marker.
    let y = MARGIN + contributions.len() as f64 * band + 0.2 * band;
    body.push_str(&rect(scale(final_margin) - 2.0, y, 4.0, 0.6 * band, FRAME));
    document(&body)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_primitives_only(svg: &str) {
        for tag in svg.split('<').skip(1) {
            let name: String = tag.chars().take_while(|c| c.is_ascii_alphanumeric()).collect();
            assert!(
                matches!(name.as_str(), "svg" | "rect" | "polyline") || tag.starts_with('/'),
                "unexpected SVG element '{name}'"
            );
        }
    }

    #[test]
    fn curve_chart_is_rects_and_polylines_only() {
        let roc = [(0.0, 0.0), (0.2, 0.8), (1.0, 1.0)];
        let svg = curve_chart(&[&roc], true);
        assert_primitives_only(&svg);
        assert!(svg.starts_with("<svg "));
        assert!(svg.ends_with("</svg>\n"));
        // Data polyline plus the diagonal reference.
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn bar_chart_draws_one_bar_per_value() {
        let svg = bar_chart(&[3.0, 2.0, 1.0]);
        assert_primitives_only(&svg);
        let chrome_rects = bar_chart(&[]).matches("<rect").count();
        assert_eq!(svg.matches("<rect").count(), chrome_rects + 3);
    }

    #[test]
    fn summary_chart_draws_one_marker_per_point() {
        let rows = vec![vec![(0.5, 0.1), (-0.2, 0.9)], vec![(0.0, 0.5)]];
        let svg = summary_chart(&rows);
        assert_primitives_only(&svg);
        let chrome_rects = summary_chart(&[]).matches("<rect").count() - 1;
        // Three markers plus the zero line on top of the empty chrome.
        assert_eq!(svg.matches("<rect").count(), chrome_rects + 1 + 3);
    }

    #[test]
    fn waterfall_chart_scales_monotone_totals() {
        let svg = waterfall_chart(-2.0, &[1.5, -0.5, 2.0], 1.0);
        assert_primitives_only(&svg);
        assert!(svg.matches("<rect").count() > 3);
    }

    #[test]
    fn shades_interpolate_between_cool_and_warm() {
        assert_eq!(value_shade(0.0), "rgb(59,76,192)");
        assert_eq!(value_shade(1.0), "rgb(180,4,38)");
        assert_eq!(value_shade(2.0), "rgb(180,4,38)");
    }
}
