//! Conformance check for out-of-process denoisers: random requests compared
//! against an in-process reference, then a malformed-input fuzz.

use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::protocol::{LineClient, Request, Response};
use super::{Denoiser, EmpiricalSource};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::rng::stream;
use crate::schedule::{forward_noise, standard_normal, NoiseSchedule};

/// Agreement required between remote and reference noise estimates: nine
/// significant digits.
pub const CHECK_REL_TOL: f64 = 5e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckConfig {
    pub requests: usize,
    pub fuzz_lines: usize,
    pub seed: u64,
    pub timeout_secs: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { requests: 100, fuzz_lines: 1000, seed: 0, timeout_secs: 30.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub remote_name: String,
    pub remote_timesteps: usize,
    pub requests: usize,
    /// Requests whose answer was missing, malformed or out of tolerance.
    pub mismatches: usize,
    pub max_rel_err: f64,
    pub fuzz_lines: usize,
    /// Fuzz lines answered with an error object.
    pub fuzz_rejected: usize,
    pub alive_after_fuzz: bool,
    pub failures: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Runs the check over `client`. A failed handshake is an error; every
/// later problem is collected in the report.
pub fn conformance_check(
    client: &mut LineClient,
    reference: &dyn Denoiser,
    source: &EmpiricalSource,
    sched: &NoiseSchedule,
    cfg: &CheckConfig,
) -> Result<CheckReport> {
    let timeout = Duration::from_secs_f64(cfg.timeout_secs);
    let mut report = CheckReport {
        remote_name: String::new(),
        remote_timesteps: 0,
        requests: cfg.requests,
        mismatches: 0,
        max_rel_err: 0.0,
        fuzz_lines: cfg.fuzz_lines,
        fuzz_rejected: 0,
        alive_after_fuzz: false,
        failures: Vec::new(),
    };
    client.send(&Request::Hello)?;
    match client.recv(timeout)? {
        Response::Hello { timesteps, name } => {
            if timesteps != sched.timesteps {
                return Err(Error::Protocol(format!("remote T = {timesteps}, expected {}", sched.timesteps)));
            }
            report.remote_name = name;
            report.remote_timesteps = timesteps;
        }
        other => return Err(Error::Protocol(format!("expected hello, got {other:?}"))),
    }

    let mut rng = stream(cfg.seed, &[0x6368_6563_6b]);
    for id in 0..cfg.requests as u64 {
        let shape = &source.shapes()[rng.random_range(0..source.len())];
        let t = rng.random_range(1..sched.timesteps);
        let x0 = PointCloud { points: shape.clone(), label: None };
        let eps = standard_normal(x0.len(), &mut rng);
        let x_t = forward_noise(sched, &x0, t, &eps)?;
        let want = reference.denoise(&x_t, t)?;
        client.send(&Request::Denoise { id, t, points: x_t.points })?;
        let bad = match client.recv(timeout) {
            Ok(Response::Denoise { id: rid, eps }) if rid == id && eps.len() == want.len() => {
                let err = eps
                    .iter()
                    .flatten()
                    .zip(want.iter().flatten())
                    .map(|(&a, &b)| rel_err(a, b))
                    .fold(0.0, f64::max);
                report.max_rel_err = report.max_rel_err.max(err);
                (err > CHECK_REL_TOL).then(|| format!("request {id}: relative error {err:e}"))
            }
            Ok(other) => Some(format!("request {id}: unexpected response {other:?}")),
            Err(e) => Some(format!("request {id}: {e}")),
        };
        if let Some(msg) = bad {
            report.mismatches += 1;
            report.failures.push(msg);
        }
    }

    for (i, line) in fuzz_lines(cfg.fuzz_lines, cfg.seed).iter().enumerate() {
        if client.send_bytes(line).is_err() {
            report.failures.push(format!("connection lost at fuzz line {i}"));
            return Ok(report);
        }
        match client.recv(timeout) {
            Ok(Response::Error { .. }) => report.fuzz_rejected += 1,
            Ok(other) => report.failures.push(format!("fuzz line {i} accepted: {other:?}")),
            Err(e) => {
                report.failures.push(format!("fuzz line {i}: {e}"));
                return Ok(report);
            }
        }
    }
    report.alive_after_fuzz = client.send(&Request::Hello).is_ok()
        && matches!(client.recv(timeout), Ok(Response::Hello { .. }));
    if !report.alive_after_fuzz {
        report.failures.push("server unresponsive after fuzz".into());
    }
    Ok(report)
}

/// Deterministic malformed request lines. None is blank (servers skip blank
/// lines) and none contains a newline.
pub fn fuzz_lines(count: usize, seed: u64) -> Vec<Vec<u8>> {
    const TEMPLATES: &[&str] = &[
        r#"{"op":"denoise","id":1,"t":10,"points":[[0,0,0]]"#,
        r#"{"op":"denoise","id":2,"t":"ten","points":[[0,0,0]]}"#,
        r#"{"op":"denoise","id":3,"t":-4,"points":[[0,0,0]]}"#,
        r#"{"op":"denoise","id":4,"t":10,"points":[[0,0]]}"#,
        r#"{"op":"denoise","id":5,"t":10,"points":[]}"#,
        r#"{"op":"denoise","id":6,"t":10}"#,
        r#"{"op":"denoise","id":7,"t":1000000,"points":[[0,0,0]]}"#,
        r#"{"op":"denoise","id":8,"t":10,"points":[[NaN,0,0]]}"#,
        r#"{"op":"denoise","id":9,"t":10,"points":[[1e999,0,0]]}"#,
        r#"{"op":"launch","id":10}"#,
        r#"{"id":11}"#,
        r#"[1,2,3]"#,
        r#""hello""#,
        r#"null"#,
        r#"{"op":5}"#,
        r#"{{{{"#,
    ];
    let mut rng = stream(seed, &[0x6675_7a7a]);
    (0..count)
        .map(|i| {
            if i % 4 == 3 {
                // random bytes, possibly invalid UTF-8, with a non-JSON first byte
                let len = rng.random_range(1..64);
                let mut line = vec![b'#'];
                line.extend((0..len).map(|_| loop {
                    let b: u8 = rng.random();
                    if b != b'\n' {
                        break b;
                    }
                }));
                line
            } else {
                let t = TEMPLATES.choose(&mut rng).expect("templates");
                let mut line = t.as_bytes().to_vec();
                if i % 4 == 1 && line.len() > 2 {
                    // truncation keeps at least one byte
                    let cut = rng.random_range(1..line.len());
                    line.truncate(cut);
                    if line.iter().all(u8::is_ascii_whitespace) {
                        line = b"{".to_vec();
                    }
                }
                line
            }
        })
        .collect()
}
