//! SVG rendering of per-segment verdicts against annotated error spans.

use std::fmt::Write;

use amnar_core::dataset::ErrorSpan;
use amnar_core::detector::SegmentVerdict;

const ROW: f64 = 28.0;
const LABEL_WIDTH: f64 = 120.0;
const PLOT_WIDTH: f64 = 840.0;

/// One timeline row.
pub struct TimelineRow<'a> {
    pub id: &'a str,
    pub frames: usize,
    pub verdicts: &'a [SegmentVerdict],
    pub error_spans: &'a [ErrorSpan],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// One row per video: segment bars are green when judged normal and red
/// when flagged; annotated error spans are outlined in black above them.
pub fn render_svg(rows: &[TimelineRow<'_>]) -> String {
    let height = ROW * rows.len() as f64 + 10.0;
    let width = LABEL_WIDTH + PLOT_WIDTH + 10.0;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="monospace" font-size="11">"#
    );
    for (i, row) in rows.iter().enumerate() {
        let y = 5.0 + ROW * i as f64;
        let scale = PLOT_WIDTH / row.frames.max(1) as f64;
        let x = |frame: usize| LABEL_WIDTH + frame as f64 * scale;
        let _ = writeln!(svg, r#"<text x="4" y="{:.1}">{}</text>"#, y + 16.0, escape(row.id));
        for v in row.verdicts {
            let colour = if v.is_error { "#d62728" } else { "#2ca02c" };
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.1}" width="{:.2}" height="14" fill="{colour}"><title>label {} [{}, {}) score {:.3}</title></rect>"#,
                x(v.segment.st),
                y + 8.0,
                (x(v.segment.ed) - x(v.segment.st)).max(0.5),
                v.segment.label.code(),
                v.segment.st,
                v.segment.ed,
                v.score
            );
        }
        for s in row.error_spans {
            let _ = writeln!(
                svg,
                r#"<rect x="{:.2}" y="{:.1}" width="{:.2}" height="20" fill="none" stroke="black"><title>{}</title></rect>"#,
                x(s.st),
                y + 5.0,
                (x(s.ed) - x(s.st)).max(0.5),
                escape(&s.kind)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use amnar_core::dataset::ActionSegment;

    #[test]
    fn renders_rects_for_segments_and_spans() {
        let v = SegmentVerdict {
            segment: ActionSegment::new(2, 0, 5),
            d_min: 1.0,
            matched: 2,
            candidates: vec![2],
            is_error: true,
            score: 2.0,
        };
        let spans = [ErrorSpan { st: 0, ed: 5, kind: "a<b".into() }];
        let svg = render_svg(&[TimelineRow { id: "v", frames: 10, verdicts: &[v], error_spans: &spans }]);
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("#d62728") && svg.contains("a&lt;b"));
    }
}
