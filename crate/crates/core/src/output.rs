//! Deterministic text and image encodings of simulation results. Everything
//! here renders to a `String`: integers verbatim, floats with 17 significant
//! digits, so identical inputs give byte-identical files on any platform.

use std::fmt::Write;

use crate::growth::{GrowthError, GrowthTrace};
use crate::lattice::Site;
use crate::sandpile::Grid2;
use crate::stats::ScalingRow;

/// Shortest representation that still round-trips: one leading digit plus
/// 16 after the point.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Arrival list in growth order: `n1,n2,arrival_index,arrival_time`, the
/// time column empty for discrete-time traces.
pub fn cluster_csv(trace: &GrowthTrace) -> String {
    let mut out = String::from("n1,n2,arrival_index,arrival_time\n");
    for (j, site) in trace.arrivals().iter().enumerate() {
        let time = trace.times().map_or(String::new(), |ts| fmt_float(ts[j]));
        writeln!(out, "{},{},{},{}", site.n1, site.n2, j + 1, time).unwrap();
    }
    out
}

/// Dense comma-separated rows, no header, top row first.
pub fn grid_csv(grid: &Grid2) -> String {
    let mut out = String::new();
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            if x > 0 {
                out.push(',');
            }
            out.push_str(&fmt_float(grid.get(x, y)));
        }
        out.push('\n');
    }
    out
}

/// Plain-text PGM (P2) of a mass grid: 0 empty to 255 full, values clamped
/// to [0, 1].
pub fn grid_pgm(grid: &Grid2) -> String {
    let mut out = format!("P2\n{} {}\n255\n", grid.width(), grid.height());
    for y in 0..grid.height() {
        for x in 0..grid.width() {
            if x > 0 {
                out.push(' ');
            }
            let v = (grid.get(x, y).clamp(0.0, 1.0) * 255.0).round() as u8;
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// First-exit distribution estimate: `n1,n2,p_hat` sorted by site.
pub fn harmonic_measure_csv(measure: &std::collections::BTreeMap<Site, f64>) -> String {
    let mut out = String::from("n1,n2,p_hat\n");
    for (site, p) in measure {
        writeln!(out, "{},{},{}", site.n1, site.n2, fmt_float(*p)).unwrap();
    }
    out
}

pub fn scaling_csv(rows: &[ScalingRow]) -> String {
    let mut out = String::from(
        "n,runs,mean_inner,mean_outer,p95_inner,p95_outer,p95_total,\
         inner_ratio,outer_ratio,total_ratio,exceed_count\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.n,
            r.runs,
            fmt_float(r.mean_inner),
            fmt_float(r.mean_outer),
            r.p95_inner,
            r.p95_outer,
            r.p95_total,
            fmt_float(r.inner_ratio),
            fmt_float(r.outer_ratio),
            fmt_float(r.total_ratio),
            r.exceed_count,
        )
        .unwrap();
    }
    out
}

/// Sites where the cluster disagrees with the deterministic strip
/// `y <= T/N^2`: occupied sites whose cell centre lies above the line are
/// early, empty sites (at or above row 1) below it are late.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricDifference {
    pub early: Vec<Site>,
    pub late: Vec<Site>,
    /// Occupied sites consistent with the strip (context, not difference).
    pub on_time_occupied: u64,
    /// Row range `1..=top` the classification scanned.
    pub top_row: i64,
    /// The strip boundary in row units, `T / N`.
    pub line: f64,
}

pub fn classify_symmetric_difference(
    trace: &GrowthTrace,
    y0: f64,
) -> Result<SymmetricDifference, GrowthError> {
    let n = trace.n();
    let nf = f64::from(n);
    let expected = (y0 * nf * nf).floor() as u64;
    if trace.particles() != expected {
        return Err(GrowthError::BadTrace(format!(
            "trace holds {} particles but height {y0} needs {expected}",
            trace.particles()
        )));
    }
    let line = trace.particles() as f64 / nf;
    let cluster = trace.cluster();
    let top_row = cluster.max_row().max(line.ceil() as i64) + 2;
    let mut early = Vec::new();
    let mut late = Vec::new();
    let mut on_time_occupied = 0u64;
    for n2 in 1..=top_row {
        let center = n2 as f64 - 0.5;
        for n1 in 1..=i64::from(n) {
            let occupied = cluster.occupied(n1, n2);
            if occupied && center > line {
                early.push(Site::new(n1, n2));
            } else if !occupied && center < line {
                late.push(Site::new(n1, n2));
            } else if occupied {
                on_time_occupied += 1;
            }
        }
    }
    Ok(SymmetricDifference { early, late, on_time_occupied, top_row, line })
}

/// The symmetric difference itself: `n1,n2,class` with class `early` or
/// `late` (on-time sites are the complement and are omitted).
pub fn symmetric_difference_csv(sd: &SymmetricDifference) -> String {
    let mut out = String::from("n1,n2,class\n");
    for s in &sd.early {
        writeln!(out, "{},{},early", s.n1, s.n2).unwrap();
    }
    for s in &sd.late {
        writeln!(out, "{},{},late", s.n1, s.n2).unwrap();
    }
    out
}

/// Plain-text PPM (P3), highest row on top: early sites red, late blue,
/// occupied on-time gray, empty background white.
pub fn symmetric_difference_ppm(trace: &GrowthTrace, sd: &SymmetricDifference) -> String {
    let n = trace.n() as usize;
    let height = sd.top_row as usize;
    let mut out = format!("P3\n{n} {height}\n255\n");
    let early: std::collections::HashSet<Site> = sd.early.iter().copied().collect();
    let late: std::collections::HashSet<Site> = sd.late.iter().copied().collect();
    let cluster = trace.cluster();
    for n2 in (1..=sd.top_row).rev() {
        for n1 in 1..=n as i64 {
            if n1 > 1 {
                out.push(' ');
            }
            let site = Site::new(n1, n2);
            let rgb = if early.contains(&site) {
                "255 0 0"
            } else if late.contains(&site) {
                "0 0 255"
            } else if cluster.occupied(n1, n2) {
                "160 160 160"
            } else {
                "255 255 255"
            };
            out.push_str(rgb);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::growth::{grow_cylinder, WalkConfig};

    fn flat_trace(n: u32, rows: u64) -> GrowthTrace {
        let mut arrivals = Vec::new();
        for r in 1..=rows as i64 {
            for c in 1..=i64::from(n) {
                arrivals.push(Site::new(c, r));
            }
        }
        GrowthTrace::from_recorded(n, arrivals, None).unwrap()
    }

    #[test]
    fn float_formatting_pins_17_significant_digits() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(-0.125), "-1.2500000000000000e-1");
        assert_eq!(fmt_float(2.0f64.powi(78)), "3.0223145490365729e23");
        let v = 0.1 + 0.2;
        assert_eq!(fmt_float(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn cluster_csv_blanks_times_for_discrete_traces() {
        let trace = flat_trace(2, 1);
        assert_eq!(
            cluster_csv(&trace),
            "n1,n2,arrival_index,arrival_time\n1,1,1,\n2,1,2,\n"
        );
    }

    #[test]
    fn grid_outputs_are_dense_and_clamped() {
        let mut g = Grid2::new(3, 3);
        g.set(1, 1, 2.5);
        g.set(2, 2, 0.5);
        let csv = grid_csv(&g);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("0.0000000000000000e0,"));
        let pgm = grid_pgm(&g);
        let mut lines = pgm.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("3 3"));
        assert_eq!(lines.next(), Some("255"));
        assert_eq!(lines.next(), Some("0 0 0"));
        assert_eq!(lines.next(), Some("0 255 0"));
        assert_eq!(lines.next(), Some("0 0 128"));
    }

    #[test]
    fn flat_cluster_has_empty_symmetric_difference() {
        let n = 6u32;
        let trace = flat_trace(n, 4);
        let sd = classify_symmetric_difference(&trace, 4.0 / f64::from(n)).unwrap();
        assert!(sd.early.is_empty());
        assert!(sd.late.is_empty());
        assert_eq!(sd.on_time_occupied, 24);
        assert_eq!(sd.line, 4.0);

        let err = classify_symmetric_difference(&trace, 0.5).unwrap_err();
        assert!(matches!(err, GrowthError::BadTrace(_)));
    }

    #[test]
    fn single_column_growth_is_on_time() {
        let arrivals: Vec<Site> = (1..=9).map(|r| Site::new(1, r)).collect();
        let trace = GrowthTrace::from_recorded(1, arrivals, None).unwrap();
        let sd = classify_symmetric_difference(&trace, 9.0).unwrap();
        assert!(sd.early.is_empty() && sd.late.is_empty());
    }

    #[test]
    fn grown_cluster_difference_straddles_the_line() {
        let n = 16u32;
        let trace = grow_cylinder(
            n,
            u64::from(n) * u64::from(n),
            11,
            0,
            &WalkConfig::for_circumference(n),
        )
        .unwrap();
        let sd = classify_symmetric_difference(&trace, 1.0).unwrap();
        // At T = N^2 the strip holds exactly T cells, so the two sides of
        // the difference must balance exactly.
        assert_eq!(sd.early.len(), sd.late.len());
        assert!(!sd.early.is_empty(), "a random cluster is never perfectly flat");
        for s in &sd.early {
            assert!(s.n2 as f64 - 0.5 > sd.line);
            assert!(trace.cluster().occupied(s.n1, s.n2));
        }
        for s in &sd.late {
            assert!((s.n2 as f64) - 0.5 < sd.line && s.n2 >= 1);
            assert!(!trace.cluster().occupied(s.n1, s.n2));
        }

        let csv = symmetric_difference_csv(&sd);
        assert_eq!(csv.lines().count(), 1 + sd.early.len() + sd.late.len());
        let ppm = symmetric_difference_ppm(&trace, &sd);
        let mut lines = ppm.lines();
        assert_eq!(lines.next(), Some("P3"));
        assert_eq!(lines.next(), Some(format!("{} {}", n, sd.top_row).as_str()));
        lines.next();
        let channels: Vec<u16> =
            lines.flat_map(str::split_whitespace).map(|t| t.parse().unwrap()).collect();
        assert_eq!(channels.len(), n as usize * sd.top_row as usize * 3);
        let red = channels.chunks(3).filter(|px| px == &[255, 0, 0]).count();
        let blue = channels.chunks(3).filter(|px| px == &[0, 0, 255]).count();
        assert_eq!((red, blue), (sd.early.len(), sd.late.len()));
    }

    #[test]
    fn scaling_and_measure_tables_render_all_columns() {
        let rows = crate::stats::scaling_study(&[8], 4, 3, 4.0).unwrap();
        let csv = scaling_csv(&rows);
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().next().unwrap().split(',').count(), 11);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 11);

        let mut m = std::collections::BTreeMap::new();
        m.insert(Site::new(2, 1), 0.75);
        m.insert(Site::new(1, 1), 0.25);
        assert_eq!(
            harmonic_measure_csv(&m),
            "n1,n2,p_hat\n1,1,2.5000000000000000e-1\n2,1,7.5000000000000000e-1\n"
        );
    }
}
