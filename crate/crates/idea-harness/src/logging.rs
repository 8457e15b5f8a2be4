//! Minimal leveled logging controlled by the `IDEA_LOG` environment variable.

use crate::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LogLevel {
    Quiet,
    Info,
    Debug,
}

/// Read `IDEA_LOG` (quiet | info | debug); unset defaults to info.
pub fn level_from_env() -> Result<LogLevel> {
    match std::env::var("IDEA_LOG") {
        Err(_) => Ok(LogLevel::Info),
        Ok(v) => match v.as_str() {
            "quiet" => Ok(LogLevel::Quiet),
            "info" => Ok(LogLevel::Info),
            "debug" => Ok(LogLevel::Debug),
            other => Err(HarnessError::Config(format!(
                "IDEA_LOG must be quiet, info, or debug (got '{other}')"
            ))),
        },
    }
}

pub fn info(level: LogLevel, msg: &str) {
    if level >= LogLevel::Info {
        eprintln!("[idea] {msg}");
    }
}

pub fn debug(level: LogLevel, msg: &str) {
    if level >= LogLevel::Debug {
        eprintln!("[idea:debug] {msg}");
    }
}
