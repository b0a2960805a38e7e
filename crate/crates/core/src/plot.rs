//! Self-contained SVG plot emitters (no rendering dependencies).

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 52.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn header(title: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n"
        ),
        w = WIDTH,
        h = HEIGHT,
        cx = WIDTH / 2.0,
        title = escape(title),
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(min_x: f64, max_x: f64, min_y: f64, max_y: f64, xlabel: &str, ylabel: &str) -> String {
    let x0 = MARGIN;
    let x1 = WIDTH - MARGIN;
    let y0 = HEIGHT - MARGIN;
    let y1 = MARGIN;
    format!(
        concat!(
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
            "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n",
            "<text x=\"{xc}\" y=\"{below}\" text-anchor=\"middle\">{xl}</text>\n",
            "<text x=\"14\" y=\"{yc}\" text-anchor=\"middle\" transform=\"rotate(-90 14 {yc})\">{yl}</text>\n",
            "<text x=\"{x0}\" y=\"{below}\" text-anchor=\"start\" font-size=\"10\">{minx:.4}</text>\n",
            "<text x=\"{x1}\" y=\"{below}\" text-anchor=\"end\" font-size=\"10\">{maxx:.4}</text>\n",
            "<text x=\"{lx}\" y=\"{y0}\" text-anchor=\"end\" font-size=\"10\">{miny:.4}</text>\n",
            "<text x=\"{lx}\" y=\"{y1}\" text-anchor=\"end\" font-size=\"10\">{maxy:.4}</text>\n"
        ),
        x0 = x0,
        x1 = x1,
        y0 = y0,
        y1 = y1,
        xc = (x0 + x1) / 2.0,
        yc = (y0 + y1) / 2.0,
        below = HEIGHT - 16.0,
        lx = MARGIN - 6.0,
        xl = escape(xlabel),
        yl = escape(ylabel),
        minx = min_x,
        maxx = max_x,
        miny = min_y,
        maxy = max_y,
    )
}

fn x_map(v: f64, min: f64, max: f64) -> f64 {
    let span = if max > min { max - min } else { 1.0 };
    MARGIN + (v - min) / span * (WIDTH - 2.0 * MARGIN)
}

fn y_map(v: f64, min: f64, max: f64) -> f64 {
    let span = if max > min { max - min } else { 1.0 };
    HEIGHT - MARGIN - (v - min) / span * (HEIGHT - 2.0 * MARGIN)
}

/// Overlaid histograms of one or more series (name, values).
pub fn histogram_svg(series: &[(&str, &[f64])], bins: usize, title: &str, xlabel: &str) -> String {
    let all: Vec<f64> = series.iter().flat_map(|(_, v)| v.iter().copied()).collect();
    let min = all.iter().copied().fold(f64::INFINITY, f64::min);
    let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (min, max) = if all.is_empty() || min == max {
        (min - 0.5, min + 0.5)
    } else {
        (min, max)
    };
    let bins = bins.max(1);
    let mut counts: Vec<Vec<usize>> = Vec::new();
    let mut peak = 1usize;
    for (_, values) in series {
        let mut c = vec![0usize; bins];
        for v in *values {
            let b = (((v - min) / (max - min)) * bins as f64) as usize;
            c[b.min(bins - 1)] += 1;
        }
        peak = peak.max(c.iter().copied().max().unwrap_or(0));
        counts.push(c);
    }
    let mut svg = header(title);
    svg.push_str(&axes(min, max, 0.0, peak as f64, xlabel, "count"));
    let bw = (WIDTH - 2.0 * MARGIN) / bins as f64;
    for (si, ((name, _), c)) in series.iter().zip(&counts).enumerate() {
        let color = COLORS[si % COLORS.len()];
        for (b, n) in c.iter().enumerate() {
            if *n == 0 {
                continue;
            }
            let x = MARGIN + b as f64 * bw;
            let y = y_map(*n as f64, 0.0, peak as f64);
            svg.push_str(&format!(
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{color}\" fill-opacity=\"0.45\"/>\n",
                x,
                y,
                bw,
                HEIGHT - MARGIN - y,
            ));
        }
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"12\" height=\"12\" fill=\"{color}\" fill-opacity=\"0.45\"/><text x=\"{}\" y=\"{}\">{}</text>\n",
            WIDTH - MARGIN - 150.0,
            MARGIN + 18.0 * si as f64,
            WIDTH - MARGIN - 132.0,
            MARGIN + 18.0 * si as f64 + 10.0,
            escape(name),
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Single line chart of (x, y) points, sorted by x by the caller.
pub fn line_svg(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let min_x = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let max_x = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut min_y = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut max_y = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    if points.is_empty() {
        return header(title) + "</svg>\n";
    }
    if min_y == max_y {
        min_y -= 0.5;
        max_y += 0.5;
    }
    let mut svg = header(title);
    svg.push_str(&axes(min_x, max_x, min_y, max_y, xlabel, ylabel));
    // Zero line when the range spans it.
    if min_y < 0.0 && max_y > 0.0 {
        let zy = y_map(0.0, min_y, max_y);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{zy:.2}\" x2=\"{}\" y2=\"{zy:.2}\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n",
            MARGIN,
            WIDTH - MARGIN
        ));
    }
    let path: Vec<String> = points
        .iter()
        .enumerate()
        .map(|(i, (x, y))| {
            format!(
                "{}{:.2},{:.2}",
                if i == 0 { "M" } else { "L" },
                x_map(*x, min_x, max_x),
                y_map(*y, min_y, max_y)
            )
        })
        .collect();
    svg.push_str(&format!(
        "<path d=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
        path.join(" "),
        COLORS[0]
    ));
    for (x, y) in points {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\"/>\n",
            x_map(*x, min_x, max_x),
            y_map(*y, min_y, max_y),
            COLORS[0]
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Bar chart over unit indices (activation masks and similar).
pub fn bar_svg(values: &[f64], title: &str, xlabel: &str, ylabel: &str) -> String {
    let max_y = values.iter().copied().fold(0.0f64, f64::max).max(1e-12);
    let mut svg = header(title);
    svg.push_str(&axes(0.0, values.len() as f64, 0.0, max_y, xlabel, ylabel));
    let bw = (WIDTH - 2.0 * MARGIN) / values.len().max(1) as f64;
    for (i, v) in values.iter().enumerate() {
        if *v <= 0.0 {
            continue;
        }
        let y = y_map(*v, 0.0, max_y);
        svg.push_str(&format!(
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"{}\"/>\n",
            MARGIN + i as f64 * bw,
            y,
            (bw - 0.5).max(0.5),
            HEIGHT - MARGIN - y,
            COLORS[0]
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Per-item vertical min-max range segments (seed-variation figure).
pub fn range_svg(rows: &[(String, f64, f64)], title: &str, ylabel: &str) -> String {
    if rows.is_empty() {
        return header(title) + "</svg>\n";
    }
    let min_y = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min).min(0.0);
    let max_y = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let mut svg = header(title);
    svg.push_str(&axes(0.0, rows.len() as f64, min_y, max_y, "canary", ylabel));
    if min_y < 0.0 && max_y > 0.0 {
        let zy = y_map(0.0, min_y, max_y);
        svg.push_str(&format!(
            "<line x1=\"{}\" y1=\"{zy:.2}\" x2=\"{}\" y2=\"{zy:.2}\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n",
            MARGIN,
            WIDTH - MARGIN
        ));
    }
    let step = (WIDTH - 2.0 * MARGIN) / rows.len() as f64;
    for (i, (name, lo, hi)) in rows.iter().enumerate() {
        let x = MARGIN + (i as f64 + 0.5) * step;
        svg.push_str(&format!(
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            y_map(*lo, min_y, max_y),
            y_map(*hi, min_y, max_y),
            COLORS[0]
        ));
        svg.push_str(&format!(
            "<title>{}</title>\n",
            escape(name)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Side-by-side greyscale or RGB image pair, pixel rectangles only.
pub fn image_pair_svg(
    left: (&[f32], &str),
    right: (&[f32], &str),
    h: usize,
    w: usize,
    c: usize,
    title: &str,
) -> String {
    let cell = 8.0f64;
    let pad = 24.0;
    let total_w = (w as f64 * cell) * 2.0 + pad * 3.0;
    let total_h = h as f64 * cell + 70.0;
    let mut svg = format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{tw}\" height=\"{th}\" ",
            "viewBox=\"0 0 {tw} {th}\" font-family=\"sans-serif\" font-size=\"12\">\n",
            "<rect width=\"{tw}\" height=\"{th}\" fill=\"white\"/>\n",
            "<text x=\"{cx}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n"
        ),
        tw = total_w,
        th = total_h,
        cx = total_w / 2.0,
        title = escape(title),
    );
    for (panel, (img, label)) in [left, right].iter().enumerate() {
        let ox = pad + panel as f64 * (w as f64 * cell + pad);
        let oy = 40.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            ox + w as f64 * cell / 2.0,
            oy - 6.0,
            escape(label)
        ));
        for y in 0..h {
            for x in 0..w {
                let (r, g, b) = if c == 3 {
                    let base = (y * w + x) * 3;
                    (img[base], img[base + 1], img[base + 2])
                } else {
                    let v = img[y * w + x];
                    (v, v, v)
                };
                svg.push_str(&format!(
                    "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({},{},{})\"/>\n",
                    ox + x as f64 * cell,
                    oy + y as f64 * cell,
                    (r * 255.0) as u8,
                    (g * 255.0) as u8,
                    (b * 255.0) as u8,
                ));
            }
        }
    }
    svg.push_str("</svg>\n");
    svg
}
