//! Fits the distributed-lag temperature response for every stratum and
//! writes one fit file per stratum plus the pooled risk-curve table.

use std::fmt::Write as _;

use climort::dlnm::{self, DlnmModel};

use crate::artifact::{write_commented, write_json};
use crate::config::Resolved;
use crate::stages::{dlnm_dir, fit_file_name, load_calibration_data, provenance_using};
use crate::Failure;

pub fn run(resolved: &Resolved) -> Result<(), Failure> {
    let data = load_calibration_data(resolved)?;
    let model = dlnm::fit(&data.national, &data.strata, &resolved.config.dlnm)
        .map_err(Failure::numerical)?;
    let prov = provenance_using(resolved, &data.inputs)?;
    let dir = dlnm_dir(resolved);

    for s in &model.strata {
        let single = DlnmModel {
            config: model.config.clone(),
            quantiles: model.quantiles,
            def: model.def.clone(),
            strata: vec![s.clone()],
        };
        let text = single.to_json().map_err(Failure::input)?;
        let payload: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Failure::input(anyhow::anyhow!(e)))?;
        write_json(&dir.join(fit_file_name(s.gender, &s.bucket_label)), &prov, payload)?;
        log::info!(
            "stratum {}/{}: minimum-mortality temperature {:.1} C, dispersion {:.2}",
            s.gender,
            s.bucket_label,
            s.mmt,
            s.dispersion
        );
    }

    // cumulative relative-risk curves on the same grid the minimum search
    // uses: 0.1 degree steps from the 1st to the 99th percentile
    let lo = model.quantiles.p01;
    let hi = model.quantiles.p99;
    let steps = ((hi - lo) / 0.1).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|i| lo + i as f64 * 0.1).collect();
    let mut body = String::from(
        "gender,bucket,bucket_label,temperature,log_rr,se,rr,rr_lo,rr_hi\n",
    );
    for s in &model.strata {
        let points = dlnm::relative_risk(
            &model.def,
            &s.cross_coefficients(),
            &s.cross_covariance(),
            s.mmt,
            &grid,
        )
        .map_err(Failure::numerical)?;
        for p in points {
            writeln!(
                body,
                "{},{},{},{},{},{},{},{},{}",
                s.gender,
                s.bucket,
                s.bucket_label,
                p.temperature,
                p.log_rr,
                p.se,
                p.rr,
                p.rr_low,
                p.rr_high
            )
            .expect("writing to a string cannot fail");
        }
    }
    write_commented(&dir.join("rr_curves.csv"), &prov, &body)?;
    Ok(())
}
