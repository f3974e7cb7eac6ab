//! Pass/fail bookkeeping for the acceptance run.

use std::error::Error;
use std::fmt;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

pub type CheckResult = Result<(), Box<dyn Error>>;

/// `|measured / target - 1| <= tol`.
pub fn within_rel(measured: f64, target: f64, tol: f64) -> bool {
    (measured / target - 1.0).abs() <= tol
}

pub fn within_abs(measured: f64, target: f64, tol: f64) -> bool {
    (measured - target).abs() <= tol
}

/// One acceptance criterion: passes when every check passes.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: u32,
    pub title: String,
    pub pass: bool,
    pub details: Vec<String>,
    pub seconds: f64,
}

impl Outcome {
    pub fn new(id: u32, title: &str) -> Self {
        Self { id, title: title.to_string(), pass: true, details: Vec::new(), seconds: 0.0 }
    }

    pub fn check(&mut self, ok: bool, detail: impl Into<String>) -> bool {
        self.pass &= ok;
        self.details.push(format!("[{}] {}", if ok { "ok" } else { "FAIL" }, detail.into()));
        ok
    }

    /// Information that does not enter the verdict.
    pub fn note(&mut self, detail: impl Into<String>) {
        self.details.push(format!("[info] {}", detail.into()));
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for d in &self.details {
            writeln!(f, "    {d}")?;
        }
        write!(f, "{} criterion {}: {} ({:.1} s)", if self.pass { "PASS" } else { "FAIL" }, self.id, self.title, self.seconds)
    }
}

#[derive(Debug, Default)]
pub struct Suite {
    pub outcomes: Vec<Outcome>,
}

impl Suite {
    /// Run one criterion and print its block; errors and panics count as failures.
    pub fn run(&mut self, id: u32, title: &str, f: impl FnOnce(&mut Outcome) -> CheckResult) {
        let mut o = Outcome::new(id, title);
        let start = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(|| f(&mut o)));
        match res {
            Ok(Ok(())) => {}
            Ok(Err(e)) => {
                o.check(false, format!("error: {e}"));
            }
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                o.check(false, format!("panic: {msg}"));
            }
        }
        o.seconds = start.elapsed().as_secs_f64();
        println!("{o}");
        let _ = std::io::stdout().flush();
        self.outcomes.push(o);
    }

    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.pass)
    }

    /// Print the summary; failure exit status when any criterion failed.
    pub fn finish(&self) -> ExitCode {
        let n_pass = self.outcomes.iter().filter(|o| o.pass).count();
        println!("acceptance: {n_pass} of {} criteria passed", self.outcomes.len());
        for o in self.outcomes.iter().filter(|o| !o.pass) {
            println!("  failed: criterion {} ({})", o.id, o.title);
        }
        if self.passed() {
            ExitCode::SUCCESS
        } else {
            ExitCode::FAILURE
        }
    }
}
