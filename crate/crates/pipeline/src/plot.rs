//! Static SVG plots of a campaign report.
//!
//! `rates.svg`: decay rate versus a/λ on a log axis, one `circle.record` per
//! emitter, theory overlay Γ_wg + Γ_tot, hatched band-edge interval and the
//! mean uncoupled rate. `beta.svg`: measured and predicted β versus a/λ.

use std::fmt::Write as _;

use crate::report::CampaignReport;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
/// Upper limit (ns⁻¹) of the rate axis.
const THEORY_Y_CAP: f64 = 1e3;

/// Escapes text for element content and attribute values.
pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl IntoIterator<Item = f64>, log: bool, pad: f64) -> Self {
        let (mut lo, mut hi) = values
            .into_iter()
            .filter(|v| v.is_finite() && (!log || *v > 0.0))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if !lo.is_finite() {
            (lo, hi) = if log { (0.01, 10.0) } else { (0.0, 1.0) };
        }
        if log {
            let (l, h) = (lo.log10().floor(), hi.log10().ceil());
            let h = if h <= l { l + 1.0 } else { h };
            Axis {
                lo: 10f64.powf(l),
                hi: 10f64.powf(h),
                log,
            }
        } else {
            let span = if hi > lo { hi - lo } else { lo.abs().max(1e-3) * 0.02 };
            Axis {
                lo: lo - pad * span,
                hi: hi + pad * span,
                log,
            }
        }
    }

    fn fixed(lo: f64, hi: f64) -> Self {
        Axis { lo, hi, log: false }
    }

    /// Fraction along the axis.
    fn frac(&self, v: f64) -> f64 {
        if self.log {
            (v.log10() - self.lo.log10()) / (self.hi.log10() - self.lo.log10())
        } else {
            (v - self.lo) / (self.hi - self.lo)
        }
    }

    fn contains(&self, v: f64) -> bool {
        v.is_finite() && v >= self.lo && v <= self.hi && (!self.log || v > 0.0)
    }

    fn ticks(&self) -> Vec<f64> {
        if self.log {
            let (l, h) = (self.lo.log10().round() as i32, self.hi.log10().round() as i32);
            (l..=h).map(|e| 10f64.powi(e)).collect()
        } else {
            let raw = (self.hi - self.lo) / 5.0;
            let mag = 10f64.powf(raw.log10().floor());
            let step = [1.0, 2.0, 5.0, 10.0]
                .iter()
                .map(|m| m * mag)
                .find(|s| *s >= raw)
                .unwrap_or(10.0 * mag);
            let first = (self.lo / step).ceil() as i64;
            let last = (self.hi / step).floor() as i64;
            (first..=last).map(|i| i as f64 * step).collect()
        }
    }
}

struct Frame {
    x: Axis,
    y: Axis,
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
}

impl Frame {
    fn new(x: Axis, y: Axis, x0: f64, y0: f64, w: f64, h: f64) -> Self {
        Frame { x, y, x0, y0, w, h }
    }

    fn px(&self, v: f64) -> f64 {
        self.x0 + self.x.frac(v) * self.w
    }

    fn py(&self, v: f64) -> f64 {
        self.y0 + (1.0 - self.y.frac(v)) * self.h
    }

    fn axes(&self, svg: &mut String, x_label: &str, y_label: &str, font: f64) {
        let (x0, y0, w, h) = (self.x0, self.y0, self.w, self.h);
        writeln!(
            svg,
            r#"<rect class="frame" x="{x0:.2}" y="{y0:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="black"/>"#
        )
        .unwrap();
        for t in self.x.ticks() {
            let p = self.px(t);
            writeln!(
                svg,
                r#"<line x1="{p:.2}" y1="{:.2}" x2="{p:.2}" y2="{:.2}" stroke="black"/><text x="{p:.2}" y="{:.2}" font-size="{font}" text-anchor="middle">{}</text>"#,
                y0 + h,
                y0 + h - 5.0,
                y0 + h + font + 3.0,
                fmt_tick(t)
            )
            .unwrap();
        }
        for t in self.y.ticks() {
            let p = self.py(t);
            writeln!(
                svg,
                r#"<line x1="{x0:.2}" y1="{p:.2}" x2="{:.2}" y2="{p:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" font-size="{font}" text-anchor="end">{}</text>"#,
                x0 + 5.0,
                x0 - 4.0,
                p + font / 3.0,
                fmt_tick(t)
            )
            .unwrap();
        }
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-size="{font}" text-anchor="middle">{}</text>"#,
            x0 + w / 2.0,
            y0 + h + 2.4 * font + 4.0,
            xml_escape(x_label)
        )
        .unwrap();
        let (lx, ly) = (x0 - 3.6 * font, y0 + h / 2.0);
        writeln!(
            svg,
            r#"<text x="{lx:.2}" y="{ly:.2}" font-size="{font}" text-anchor="middle" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#,
            xml_escape(y_label)
        )
        .unwrap();
    }

    /// Polyline through the points inside the frame; points outside break
    /// the line.
    fn polylines(&self, svg: &mut String, class: &str, style: &str, pts: impl IntoIterator<Item = (f64, f64)>) {
        let mut seg: Vec<String> = Vec::new();
        let flush = |seg: &mut Vec<String>, svg: &mut String| {
            if seg.len() >= 2 {
                writeln!(
                    svg,
                    r#"<polyline class="{class}" points="{}" fill="none" {style}/>"#,
                    seg.join(" ")
                )
                .unwrap();
            }
            seg.clear();
        };
        for (x, y) in pts {
            if self.x.contains(x) && self.y.contains(y) {
                seg.push(format!("{:.2},{:.2}", self.px(x), self.py(y)));
            } else {
                flush(&mut seg, svg);
            }
        }
        flush(&mut seg, svg);
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1000.0 || v.abs() < 1e-3 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn header(svg: &mut String, title: &str) {
    writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif">"#
    )
    .unwrap();
    writeln!(svg, "<title>{}</title>", xml_escape(title)).unwrap();
    svg.push_str(
        r##"<defs><pattern id="hatch" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><line x1="0" y1="0" x2="0" y2="6" stroke="#999" stroke-width="2"/></pattern></defs>
<style>.record.coupled{fill:#c0392b}.record.uncoupled{fill:none;stroke:#2c3e50}</style>
"##,
    );
}

fn x_values(report: &CampaignReport) -> Vec<f64> {
    let mut xs: Vec<f64> = report.records.iter().map(|r| r.scaled_freq).collect();
    if let Some(t) = &report.theory {
        xs.extend(t.band_edge_interval);
    }
    xs
}

fn record_marker(svg: &mut String, f: &Frame, r: &crate::analysis::EmitterRecord, y: f64, radius: f64) {
    let class = if r.coupled {
        "record coupled"
    } else {
        "record uncoupled"
    };
    let (cx, cy) = (f.px(r.scaled_freq), f.py(y.clamp(f.y.lo, f.y.hi)));
    writeln!(
        svg,
        r#"<circle class="{class}" cx="{cx:.2}" cy="{cy:.2}" r="{radius}"><title>{}: a/λ {:.5}, Γ {:.4} ns⁻¹</title></circle>"#,
        xml_escape(&r.id),
        r.scaled_freq,
        r.rate()
    )
    .unwrap();
}

fn band_edge_band(svg: &mut String, f: &Frame, report: &CampaignReport) {
    if let Some(t) = &report.theory {
        let [lo, hi] = t.band_edge_interval;
        let (a, b) = (f.px(lo.max(f.x.lo)), f.px(hi.min(f.x.hi)));
        if b > a {
            writeln!(
                svg,
                r#"<rect class="band-edge" x="{a:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="url(#hatch)" opacity="0.6"/>"#,
                f.y0,
                b - a,
                f.h
            )
            .unwrap();
        }
    }
}

/// Rate versus a/λ scatter with theory overlay.
pub fn rates_svg(report: &CampaignReport) -> String {
    let gamma_tot = report.provenance.config.emission.gamma_tot;
    let theory: Vec<(f64, f64)> = report
        .theory_curve
        .iter()
        .map(|p| (p.scaled_freq, p.gamma_wg + gamma_tot))
        .collect();
    let x = Axis::new(x_values(report), false, 0.08);
    // theory inside the x range widens the y range, up to the clamp peak
    let visible = theory
        .iter()
        .filter(|(nu, _)| x.contains(*nu))
        .map(|(_, g)| g.min(THEORY_Y_CAP));
    let y = Axis::new(
        report
            .records
            .iter()
            .map(|r| r.rate())
            .chain(report.gamma_tot_mean)
            .chain([gamma_tot])
            .chain(visible),
        true,
        0.0,
    );
    let f = Frame::new(x, y, LEFT, TOP, W - LEFT - RIGHT, H - TOP - BOTTOM);
    let mut svg = String::new();
    header(&mut svg, "Decay rate versus scaled frequency");
    band_edge_band(&mut svg, &f, report);
    f.axes(&mut svg, "a/λ", "decay rate (ns⁻¹)", 13.0);
    f.polylines(&mut svg, "theory", r##"stroke="#2980b9" stroke-width="1.5""##, theory);
    if let Some(m) = report.gamma_tot_mean.filter(|m| f.y.contains(*m)) {
        writeln!(
            svg,
            r#"<line class="gamma-tot-mean" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-dasharray="2,3"/>"#,
            f.x0,
            f.x0 + f.w,
            y = f.py(m)
        )
        .unwrap();
    }
    for r in &report.records {
        record_marker(&mut svg, &f, r, r.rate(), 4.0);
    }
    svg.push_str("</svg>\n");
    svg
}

/// β versus a/λ: measured points for coupled emitters and the predicted
/// curve.
pub fn beta_svg(report: &CampaignReport) -> String {
    let x = Axis::new(x_values(report), false, 0.08);
    let f = Frame::new(x, Axis::fixed(0.0, 1.0), LEFT, TOP, W - LEFT - RIGHT, H - TOP - BOTTOM);
    let threshold = report.provenance.config.emission.beta_threshold;
    let mut svg = String::new();
    header(&mut svg, "Beta-factor versus scaled frequency");
    band_edge_band(&mut svg, &f, report);
    f.axes(&mut svg, "a/λ", "β", 13.0);
    f.polylines(
        &mut svg,
        "theory",
        r##"stroke="#2980b9" stroke-width="1.5""##,
        report.theory_curve.iter().map(|p| (p.scaled_freq, p.beta)),
    );
    writeln!(
        svg,
        r#"<line class="beta-threshold" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black" stroke-dasharray="4,3"/>"#,
        f.x0,
        f.x0 + f.w,
        y = f.py(threshold)
    )
    .unwrap();
    for r in report.records.iter().filter(|r| r.coupled) {
        if let Some(b) = r.beta {
            record_marker(&mut svg, &f, r, b, 4.0);
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escaping_covers_markup_characters() {
        assert_eq!(
            xml_escape(r#"a<b & "c">'d'"#),
            "a&lt;b &amp; &quot;c&quot;&gt;&apos;d&apos;"
        );
    }

    #[test]
    fn log_axis_snaps_to_decades() {
        let a = Axis::new([0.05, 1.34], true, 0.0);
        assert_eq!((a.lo, a.hi), (0.01, 10.0));
        assert_eq!(a.ticks().len(), 4);
        assert!((a.frac(0.1) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn linear_ticks_are_round_and_inside() {
        let a = Axis::new([0.252, 0.266], false, 0.0);
        let t = a.ticks();
        assert!(t.len() >= 3);
        assert!(t.iter().all(|v| *v >= a.lo - 1e-12 && *v <= a.hi + 1e-12));
        assert_eq!(fmt_tick(0.255), "0.255");
    }

    #[test]
    fn degenerate_axis_has_width() {
        let a = Axis::new([0.26, 0.26], false, 0.1);
        assert!(a.hi > a.lo);
        let a = Axis::new(std::iter::empty(), true, 0.0);
        assert!(a.hi > a.lo);
    }
}
