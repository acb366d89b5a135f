use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::breakglass::{DEFAULT_QUORUM, DEFAULT_WINDOW_SECS};
use crate::contract::Timestamp;
use crate::monitor::RulesConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    Wall,
    #[default]
    Logical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSource {
    /// Qualified `namespace.table` name.
    pub name: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BreakGlassConfig {
    pub quorum: usize,
    pub window: u64,
    pub accounts: Vec<String>,
    pub approvers: Vec<String>,
}

impl Default for BreakGlassConfig {
    fn default() -> Self {
        BreakGlassConfig {
            quorum: DEFAULT_QUORUM,
            window: DEFAULT_WINDOW_SECS,
            accounts: Vec::new(),
            approvers: Vec::new(),
        }
    }
}

/// Broker configuration, usually read from TOML:
///
/// ```toml
/// data_dir = "state"
/// clock = "logical"
///
/// [[tables]]
/// name = "warehouse.orders"
/// path = "orders.csv"
///
/// [monitor]
/// volume_threshold = 10000
/// probing_threshold = 5
/// window = 300
///
/// [break_glass]
/// quorum = 2
/// window = 900
/// accounts = ["bg-admin"]
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct BrokerConfig {
    /// Ledger, contracts and credentials live here. `None` keeps everything
    /// in memory.
    pub data_dir: Option<PathBuf>,
    pub tables: Vec<TableSource>,
    pub monitor: RulesConfig,
    pub break_glass: BreakGlassConfig,
    pub clock: ClockMode,
    /// Initial logical time when no ledger exists yet.
    pub start_time: Timestamp,
}

impl BrokerConfig {
    /// Reads a TOML file. Relative paths resolve against the file's directory.
    pub fn from_toml_file(path: &Path) -> Result<BrokerConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read `{}`: {e}", path.display()))?;
        let mut cfg: BrokerConfig =
            toml::from_str(&text).map_err(|e| format!("bad config `{}`: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(dir) = &cfg.data_dir {
            if dir.is_relative() {
                cfg.data_dir = Some(base.join(dir));
            }
        }
        for t in &mut cfg.tables {
            if t.path.is_relative() {
                t.path = base.join(&t.path);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        let m = self.monitor;
        RulesConfig::new(m.volume_threshold, m.probing_threshold, m.window)
            .map_err(|e| e.to_string())?;
        if self.break_glass.quorum < 2 {
            return Err("break_glass.quorum must be at least 2".into());
        }
        if self.break_glass.window == 0 {
            return Err("break_glass.window must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Clock {
    mode: ClockMode,
    logical: Timestamp,
}

impl Clock {
    pub fn new(mode: ClockMode, start: Timestamp) -> Self {
        Clock {
            mode,
            logical: start,
        }
    }

    pub fn mode(&self) -> ClockMode {
        self.mode
    }

    pub fn now(&self) -> Timestamp {
        match self.mode {
            ClockMode::Logical => self.logical,
            ClockMode::Wall => std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs() as Timestamp),
        }
    }

    /// Advances the logical clock. `None` in wall mode.
    pub fn tick(&mut self, seconds: u64) -> Option<Timestamp> {
        match self.mode {
            ClockMode::Logical => {
                self.logical = self
                    .logical
                    .saturating_add(i64::try_from(seconds).unwrap_or(i64::MAX));
                Some(self.logical)
            }
            ClockMode::Wall => None,
        }
    }
}
