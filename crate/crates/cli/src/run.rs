use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fva_core::fdpde::{classify, solve_state, DiscreteField, SolveLog};
use fva_core::linsens::{self, boundary_velocity, VelocityField};
use fva_core::objectives::{
    dirderiv_distributed, dirderiv_tracking, direction_family, objective_value, optimality_check,
    DirDeriv, ObjectiveSpec,
};
use fva_core::shapederiv::{boundary_data, solve_derivative};
use fva_core::shapefn::check_admissible;
use fva_core::tracer::{self, Curve};
use fva_core::verify::{gates, run_study};
use fva_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::Experiment;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Stage {
    Admissible,
    Trace,
    Velocity,
    Solve,
    Derivative,
    Verify,
    Objective,
    Optimality,
    All,
}

/// Outcome of a stage that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    GateFailed,
}

pub struct Runner {
    pub exp: Experiment,
    pub out: PathBuf,
    pub seed: u64,
}

fn io_err(e: std::io::Error) -> Error {
    Error::InvalidArgument(format!("cannot write output: {e}"))
}

impl Runner {
    fn meta(&self) -> Value {
        json!({
            "tool": "fva",
            "version": env!("CARGO_PKG_VERSION"),
            "config_sha256": self.exp.hash,
            "config_name": self.exp.config.name,
        })
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.out).map_err(io_err)?;
        Ok(BufWriter::new(
            File::create(self.out.join(name)).map_err(io_err)?,
        ))
    }

    /// CSV file whose first line is the metadata header.
    fn write_csv(
        &self,
        name: &str,
        body: impl FnOnce(&mut dyn Write) -> std::io::Result<()>,
    ) -> Result<()> {
        let mut w = self.create(name)?;
        writeln!(
            w,
            "# fva {} config_sha256={}",
            env!("CARGO_PKG_VERSION"),
            self.exp.hash
        )
        .map_err(io_err)?;
        body(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    fn write_json(&self, name: &str, payload: impl Serialize) -> Result<()> {
        let mut v =
            serde_json::to_value(payload).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        if let Value::Object(m) = &mut v {
            m.insert("meta".into(), self.meta());
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &v)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        writeln!(w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn run(&self, stage: Stage) -> Result<Outcome> {
        match stage {
            Stage::Admissible => self.admissible().map(|_| Outcome::Ok),
            Stage::Trace => self.trace().map(|_| Outcome::Ok),
            Stage::Velocity => self.velocity().map(|_| Outcome::Ok),
            Stage::Solve => self.solve().map(|_| Outcome::Ok),
            Stage::Derivative => self.derivative().map(|_| Outcome::Ok),
            Stage::Verify => self.verify(),
            Stage::Objective => self.objective().map(|_| Outcome::Ok),
            Stage::Optimality => self.optimality().map(|_| Outcome::Ok),
            Stage::All => {
                self.admissible()?;
                self.trace()?;
                self.velocity()?;
                self.derivative()?;
                self.objective()?;
                self.optimality()?;
                self.verify()
            }
        }
    }

    fn admissible(&self) -> Result<()> {
        let e = &self.exp;
        let report = check_admissible(&e.g, &e.config.hold_all, 256)?;
        let failures = report.failures();
        self.write_json(
            "admissible.json",
            json!({ "g": e.config.g, "report": report, "failures": failures }),
        )?;
        report.into_result().map(|_| ())
    }

    fn trace(&self) -> Result<Vec<Curve>> {
        self.admissible()?;
        let e = &self.exp;
        let p = &e.pipeline;
        let curves = tracer::trace_components(&e.g, &e.config.hold_all, &p.search, &p.trace)?;
        for c in &curves {
            self.write_csv(&format!("curve_{}.csv", c.component_id), |w| c.write_csv(w))?;
        }
        let summary: Vec<Value> = curves
            .iter()
            .map(|c| {
                json!({
                    "component": c.component_id,
                    "period": c.period,
                    "x0": c.x0,
                    "samples": c.len(),
                    "closure_error": c.closure_error,
                    "length": c.length(),
                })
            })
            .collect();
        self.write_json("trace.json", json!({ "components": summary }))?;
        Ok(curves)
    }

    fn velocity(&self) -> Result<Vec<VelocityField>> {
        self.admissible()?;
        let e = &self.exp;
        let p = &e.pipeline;
        let fields = boundary_velocity(&e.g, &e.h, &e.config.hold_all, &p.search, &p.trace)?;
        for v in &fields {
            self.write_csv(&format!("velocity_{}.csv", v.component_id()), |w| {
                v.write_csv(&e.g, &e.h, w)
            })?;
        }
        let lipschitz = fields
            .iter()
            .map(|v| linsens::lipschitz_estimate(&e.g, &e.h, v, None))
            .collect::<Result<Vec<_>>>()?;
        let flow =
            linsens::flow_consistency(&e.g, &e.h, &fields, &e.config.lambdas, &e.config.hold_all)?;
        self.write_json(
            "velocity.json",
            json!({
                "transversality_residual": linsens::transversality_residual(&e.g, &e.h, &fields),
                "lipschitz": lipschitz,
                "flow": flow,
            }),
        )?;
        Ok(fields)
    }

    fn state(&self) -> Result<(DiscreteField, SolveLog)> {
        let e = &self.exp;
        let p = &e.pipeline;
        let mask = Arc::new(classify(&e.g, &p.grid)?);
        solve_state(mask, &p.f, &p.beta, &p.solve)
    }

    fn solve(&self) -> Result<DiscreteField> {
        self.admissible()?;
        let (y, log) = self.state()?;
        self.write_csv("state.csv", |w| y.write_csv(w))?;
        self.write_json(
            "solve_log.json",
            json!({ "log": log, "max_abs": y.max_abs() }),
        )?;
        Ok(y)
    }

    fn derivative(&self) -> Result<(DiscreteField, DiscreteField, Vec<VelocityField>)> {
        let y = self.solve()?;
        let fields = self.velocity()?;
        let e = &self.exp;
        let bd = boundary_data(&y, &fields)?;
        let (q, log) = solve_derivative(&y, &e.pipeline.beta, &bd, &e.pipeline.solve)?;
        self.write_csv("derivative.csv", |w| q.write_csv(w))?;
        self.write_csv("boundary_data.csv", |w| {
            writeln!(w, "x1,x2,value,grad_y1,grad_y2,w1,w2,component,t")?;
            for b in &bd.entries {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e}",
                    b.point[0],
                    b.point[1],
                    b.value,
                    b.grad_y[0],
                    b.grad_y[1],
                    b.w[0],
                    b.w[1],
                    b.component,
                    b.t
                )?;
            }
            Ok(())
        })?;
        self.write_json(
            "derivative_log.json",
            json!({ "log": log, "max_abs": q.max_abs() }),
        )?;
        Ok((y, q, fields))
    }

    fn dirderiv(&self, y: &DiscreteField, q: &DiscreteField, curves: &[Curve]) -> Result<DirDeriv> {
        let e = &self.exp;
        match &e.objective {
            ObjectiveSpec::TrackingH2 { .. } => dirderiv_tracking(&e.objective, y, q),
            ObjectiveSpec::Distributed { .. } => {
                dirderiv_distributed(&e.objective, &e.g, &e.h, y, Some(q), curves)
            }
        }
    }

    fn objective(&self) -> Result<()> {
        let (y, q, _) = self.derivative()?;
        let e = &self.exp;
        let p = &e.pipeline;
        let curves = tracer::trace_components(&e.g, &e.config.hold_all, &p.search, &p.trace)?;
        let j = objective_value(&e.objective, &e.g, &y)?;
        let d = self.dirderiv(&y, &q, &curves)?;
        let lambda = e.config.tolerances.fd_lambda;
        let gl = e.g.perturbed(lambda, &e.h);
        let yl = solve_state(Arc::new(classify(&gl, &p.grid)?), &p.f, &p.beta, &p.solve)?.0;
        let fd = (objective_value(&e.objective, &gl, &yl)? - j) / lambda;
        self.write_json(
            "objective.json",
            json!({
                "j": j,
                "j_prime": d,
                "finite_difference": { "lambda": lambda, "quotient": fd, "difference": (d.value - fd).abs() },
                "multi_component": curves.len() > 1,
            }),
        )
    }

    fn optimality(&self) -> Result<()> {
        self.admissible()?;
        let e = &self.exp;
        let p = &e.pipeline;
        let curves = tracer::trace_components(&e.g, &e.config.hold_all, &p.search, &p.trace)?;
        let family = direction_family(&curves, e.config.directions.count, self.seed);
        let report = optimality_check(
            &e.g,
            &e.objective,
            &family,
            p,
            e.config.tolerances.optimality,
        )?;
        self.write_csv("optimality.csv", |w| report.write_csv(w))?;
        let labels: Vec<Value> = family
            .iter()
            .map(|d| json!({ "label": d.label, "h": d.h.to_string() }))
            .collect();
        self.write_json(
            "optimality.json",
            json!({ "seed": self.seed, "directions": labels, "report": report }),
        )
    }

    fn verify(&self) -> Result<Outcome> {
        self.admissible()?;
        let study = run_study(&self.exp.study_input())?;
        let gates = gates(&study, self.exp.config.gate);
        let passed = !gates.iter().any(|g| g.failed());
        self.write_csv("study.csv", |w| study.write_csv(w))?;
        self.write_json(
            "study.json",
            json!({ "gate_mode": self.exp.config.gate, "study": study, "gates": gates, "passed": passed }),
        )?;
        Ok(if passed {
            Outcome::Ok
        } else {
            Outcome::GateFailed
        })
    }
}

/// Exit code for a failed stage: 3 for solver failures, 2 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence { .. }
        | Error::ProjectionFailed { .. }
        | Error::PeriodNotDetected { .. }
        | Error::Drift { .. }
        | Error::BoundaryStencil { .. } => 3,
        _ => 2,
    }
}

pub fn resolve_out(cli: Option<&Path>, exp: &Experiment) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| exp.config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&exp.config.name))
}
