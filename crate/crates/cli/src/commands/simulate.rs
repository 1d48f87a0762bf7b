use gdfm::decomposition::write_part_csv;
use gdfm::panel::{write_csv, Layout, Panel, TCode};
use gdfm::simulator::{integrate_series, preset, simulate, RealizedModel, SimulatedPanel};
use nalgebra::DMatrix;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::output::OutDir;

/// Transformation codes assigned cyclically to exported series.
pub const TCODE_CYCLE: [u8; 12] = [5, 5, 2, 6, 1, 5, 2, 4, 5, 6, 7, 2];
/// Leading rows consumed by the most demanding code in the cycle.
pub const EXPORT_LEAD: usize = 2;
/// Month and year of the first exported row.
pub const EXPORT_START: (u32, i32) = (12, 1959);

/// Stationary scale and initial level of an exported series.
fn export_scale(code: TCode) -> (f64, f64) {
    match code {
        TCode::Level | TCode::Log => (1.0, 0.0),
        TCode::Diff | TCode::Diff2 => (1.0, 100.0),
        TCode::LogDiff => (0.01, 100.0),
        TCode::LogDiff2 | TCode::PctChangeDiff => (0.001, 100.0),
    }
}

/// Monthly stamps in the `M/1/YYYY` form.
pub fn monthly_dates(start: (u32, i32), count: usize) -> Vec<String> {
    (0..count)
        .map(|k| {
            let m0 = start.0 as usize - 1 + k;
            format!("{}/1/{}", m0 % 12 + 1, start.1 + (m0 / 12) as i32)
        })
        .collect()
}

pub fn run(cfg: &RunConfig, out: &OutDir) -> CliResult<()> {
    let model = cfg.model.as_deref().expect("resolved model");
    let (n, t, seed) = (
        cfg.n.expect("resolved n"),
        cfg.t.expect("resolved T"),
        cfg.seed.expect("resolved seed"),
    );
    let burn_in = cfg.burn_in.expect("resolved burn-in");
    let real = preset(model)?.realize(n, seed)?;
    let ids: Vec<String> = (1..=n).map(|i| format!("S{i}")).collect();
    match cfg.layout() {
        Layout::Plain => {
            let sim = simulate(&real.model, t, seed, burn_in)?;
            let times: Vec<String> = (1..=t).map(|k| k.to_string()).collect();
            let panel = Panel::new(sim.y.clone(), ids.clone(), times.clone())?;
            out.write_with("panel.csv", |w| Ok(write_csv(&panel, None, w)?))?;
            write_components(out, &sim, &vec![1.0; n], 0, &ids, &times)?;
        }
        Layout::Fredmd => {
            let sim = simulate(&real.model, t + EXPORT_LEAD, seed, burn_in)?;
            let dates = monthly_dates(EXPORT_START, t + EXPORT_LEAD);
            let codes: Vec<TCode> = (0..n)
                .map(|i| TCode::from_code(TCODE_CYCLE[i % TCODE_CYCLE.len()] as i64).expect("valid code"))
                .collect();
            let mut levels = DMatrix::zeros(t + EXPORT_LEAD, n);
            let mut scales = Vec::with_capacity(n);
            for (i, &code) in codes.iter().enumerate() {
                let (scale, start) = export_scale(code);
                let k = code.order();
                let x: Vec<f64> = sim.y.column(i).iter().skip(k).map(|v| v * scale).collect();
                let raw = integrate_series(&x, code, start);
                if raw.iter().any(|v| !v.is_finite()) {
                    return Err(CliError::Data(format!("series {} overflows when integrated", ids[i])));
                }
                levels.set_column(i, &nalgebra::DVector::from_vec(raw));
                scales.push(scale);
            }
            let panel = Panel::new(levels, ids.clone(), dates.clone())?;
            out.write_with("panel.csv", |w| Ok(write_csv(&panel, Some(&codes), w)?))?;
            write_components(out, &sim, &scales, EXPORT_LEAD, &ids, &dates[EXPORT_LEAD..])?;
        }
    }
    write_truth(out, &real, &ids)
}

fn write_components(
    out: &OutDir,
    sim: &SimulatedPanel,
    scales: &[f64],
    skip: usize,
    ids: &[String],
    times: &[String],
) -> CliResult<()> {
    let rows = sim.n_obs() - skip;
    let scaled = |m: &DMatrix<f64>| DMatrix::from_fn(rows, m.ncols(), |t, i| m[(t + skip, i)] * scales[i]);
    let parts = [
        ("dynamic.csv", scaled(&sim.chi)),
        ("static.csv", scaled(&sim.c)),
        ("weak.csv", scaled(&sim.e_chi)),
        ("idiosyncratic.csv", scaled(&sim.xi)),
    ];
    for (name, part) in &parts {
        out.write_with(name, |w| Ok(write_part_csv(part, ids, times, w)?))?;
    }
    let f = sim.f.rows(skip, rows).into_owned();
    let f_ids: Vec<String> = (1..=f.ncols()).map(|j| format!("F{j}")).collect();
    out.write_with("factors.csv", |w| Ok(write_part_csv(&f, &f_ids, times, w)?))?;
    let fw = sim.f_w.rows(skip, rows).into_owned();
    let w_ids: Vec<String> = (1..=fw.ncols()).map(|j| format!("W{j}")).collect();
    out.write_with("weak_factors.csv", |w| Ok(write_part_csv(&fw, &w_ids, times, w)?))
}

fn write_truth(out: &OutDir, real: &RealizedModel, ids: &[String]) -> CliResult<()> {
    let pop = real.model.population_variances()?;
    let (strong, weak) = (pop.strong_shares(), pop.weak_shares());
    out.write_with("population.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["series", "role", "variance", "share_strong", "share_weak", "share_xi"])?;
        for (i, id) in ids.iter().enumerate() {
            csv.write_record([
                id.clone(),
                role(real, i).to_string(),
                pop.total[i].to_string(),
                strong[i].to_string(),
                weak[i].to_string(),
                (pop.xi[i] / pop.total[i]).to_string(),
            ])?;
        }
        csv.flush()?;
        Ok(())
    })?;
    out.write_with("truth.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["series", "role", "term", "value"])?;
        for (i, id) in ids.iter().enumerate() {
            for (label, value) in gdfm::monte_carlo::truth_table(real, i) {
                csv.write_record([id.clone(), role(real, i).to_string(), label, value.to_string()])?;
            }
        }
        csv.flush()?;
        Ok(())
    })
}

fn role(real: &RealizedModel, i: usize) -> &'static str {
    if real.designated.contains(&i) {
        "designated"
    } else if real.probes.contains(&i) {
        "probe"
    } else {
        "other"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monthly_dates_roll_over_years() {
        assert_eq!(monthly_dates((12, 1959), 3), vec!["12/1/1959", "1/1/1960", "2/1/1960"]);
    }

    #[test]
    fn cycle_orders_fit_the_lead() {
        assert!(TCODE_CYCLE
            .iter()
            .all(|&c| TCode::from_code(c as i64).unwrap().order() <= EXPORT_LEAD));
    }
}
