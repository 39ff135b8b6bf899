//! Line-delimited JSON progress events on stderr, gated by `SMASH_LOG`
//! (`error`, `info`, or `debug`; default `info`).

use std::io::Write;

use smash_core::search::{Telemetry, TelemetryEvent};

#[derive(Clone, Copy, PartialEq, PartialOrd, Debug)]
pub enum LogLevel {
    Error = 0,
    Info = 1,
    Debug = 2,
}

impl LogLevel {
    pub fn from_env() -> LogLevel {
        match std::env::var("SMASH_LOG").as_deref() {
            Ok("error") => LogLevel::Error,
            Ok("debug") => LogLevel::Debug,
            _ => LogLevel::Info,
        }
    }
}

pub struct StderrTelemetry {
    level: LogLevel,
}

impl StderrTelemetry {
    pub fn from_env() -> Self {
        StderrTelemetry { level: LogLevel::from_env() }
    }

    pub fn with_level(level: LogLevel) -> Self {
        StderrTelemetry { level }
    }
}

impl Telemetry for StderrTelemetry {
    fn event(&mut self, ev: &TelemetryEvent) {
        let needed = match ev {
            TelemetryEvent::Step { .. } => LogLevel::Debug,
            _ => LogLevel::Info,
        };
        if (self.level as u8) < (needed as u8) {
            return;
        }
        if let Ok(line) = serde_json::to_string(ev) {
            let mut err = std::io::stderr().lock();
            let _ = writeln!(err, "{line}");
        }
    }
}
