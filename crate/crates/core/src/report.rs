//! Tidy CSV output. Floats use `Display` (shortest round-trip form), so
//! identical runs give byte-identical files.

use std::io::{self, Write};

use crate::hjb::{FeedbackTable, ValueSurface};
use crate::simulate::{GrowthReport, PopulationPath};
use crate::target::{DppReport, RateRecord};

/// Terminal configurations: one row per alive particle.
pub fn write_population_csv<W: Write>(mut w: W, paths: &[PopulationPath]) -> io::Result<()> {
    let d = paths.first().map_or(1, |p| p.terminal.dim().saturating_sub(1));
    let xs: Vec<String> = (0..d).map(|k| if d == 1 { "x".to_string() } else { format!("x{k}") }).collect();
    writeln!(w, "path,label,{},y", xs.join(","))?;
    for (i, p) in paths.iter().enumerate() {
        for q in p.terminal.particles() {
            write!(w, "{i},{}", q.label)?;
            for v in &q.point {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

pub fn write_events_csv<W: Write>(mut w: W, paths: &[PopulationPath]) -> io::Result<()> {
    writeln!(w, "path,time,parent,offspring_count")?;
    for (i, p) in paths.iter().enumerate() {
        for e in &p.events {
            writeln!(w, "{i},{},{},{}", e.time, e.parent, e.offspring_count)?;
        }
    }
    Ok(())
}

/// Summary row, then per-path `sup_s |V_s|` and terminal size.
pub fn write_growth_csv<W: Write>(mut w: W, report: &GrowthReport, paths: &[PopulationPath]) -> io::Result<()> {
    writeln!(w, "path,max_size,terminal_size,mean_sup_size,se,bound,within_bound")?;
    writeln!(w, "all,,,{},{},{},{}", report.mean_sup_size, report.se, report.bound, report.within_bound)?;
    for (i, p) in paths.iter().enumerate() {
        writeln!(w, "{i},{},{},,,,", p.max_size, p.terminal.len())?;
    }
    Ok(())
}

/// `label,t,x,value[,control,empty_kernel]` on every `stride`-th time level
/// (the first and last levels are always written).
pub fn write_surface_csv<W: Write>(
    mut w: W,
    surface: &ValueSurface,
    feedback: Option<&FeedbackTable>,
    stride: usize,
) -> io::Result<()> {
    let stride = stride.max(1);
    let xs = surface.xs();
    let nt = surface.nt();
    write!(w, "label,t,x,value")?;
    if feedback.is_some() {
        write!(w, ",control,empty_kernel")?;
    }
    writeln!(w)?;
    for label in &surface.labels {
        for n in (0..=nt).filter(|n| n % stride == 0 || *n == nt) {
            let t = surface.time(n);
            for (j, (x, v)) in xs.iter().zip(surface.slice(label, n)).enumerate() {
                write!(w, "{label},{t},{x},{v}")?;
                if let Some(fb) = feedback {
                    write!(w, ",{},{}", fb.control_at(label, n, j), fb.flagged(label, n, j) as u8)?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

pub fn write_rates_csv<W: Write>(mut w: W, records: &[RateRecord]) -> io::Result<()> {
    writeln!(w, "y,control_id,success_rate,se")?;
    for r in records {
        writeln!(w, "{},{},{},{}", r.y, r.control_id, r.rate, r.se)?;
    }
    Ok(())
}

pub fn write_dpp_csv<W: Write>(mut w: W, rows: &[(String, DppReport)]) -> io::Result<()> {
    writeln!(w, "theta,n_paths,y0,violation_rate,out_of_domain_rate")?;
    for (theta, r) in rows {
        writeln!(w, "{theta},{},{},{},{}", r.n_paths, r.y0, r.violation_rate, r.out_of_domain_rate)?;
    }
    Ok(())
}
