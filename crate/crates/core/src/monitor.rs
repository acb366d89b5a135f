//! Real-time detection over gateway query events.
//!
//! Rules, all evaluated incrementally per session:
//! - `ExfiltrationAttempt` (Critical): any COPY INTO statement.
//! - `EnumerationPattern` (High): SHOW TABLES followed later by `SELECT *`;
//!   at most once per session.
//! - `VolumeDeviation` (High): cumulative rows returned exceed the volume
//!   threshold; at most once per session.
//! - `ProbingDenials` (High): denials within the sliding window reach the
//!   probing threshold; the window restarts after each alert.
//!
//! `BreakGlassActivated` (Critical) is raised directly by the broker.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::contract::Timestamp;
use crate::gateway::Verdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Select,
    StarSelect,
    ShowTables,
    CopyInto,
    /// Statement that failed to parse.
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorEvent {
    /// Position in the monitor's history, assigned on record.
    #[serde(default)]
    pub index: u64,
    pub session_id: String,
    pub enclave_id: String,
    pub contract_id: String,
    pub kind: EventKind,
    pub verdict: Verdict,
    pub rows_returned: u64,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    ExfiltrationAttempt,
    EnumerationPattern,
    VolumeDeviation,
    ProbingDenials,
    BreakGlassActivated,
}

impl Rule {
    pub fn severity(self) -> Severity {
        match self {
            Rule::ExfiltrationAttempt | Rule::BreakGlassActivated => Severity::Critical,
            _ => Severity::High,
        }
    }
}

impl std::str::FromStr for Rule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "ExfiltrationAttempt" => Rule::ExfiltrationAttempt,
            "EnumerationPattern" => Rule::EnumerationPattern,
            "VolumeDeviation" => Rule::VolumeDeviation,
            "ProbingDenials" => Rule::ProbingDenials,
            "BreakGlassActivated" => Rule::BreakGlassActivated,
            other => return Err(format!("unknown rule `{other}`")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Severity {
    High,
    Critical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    /// Index into the monitor event history.
    Event(u64),
    /// Break-glass request that was activated.
    BreakGlassRequest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Alert {
    pub alert_id: String,
    pub rule: Rule,
    pub severity: Severity,
    pub session_id: Option<String>,
    pub enclave_id: Option<String>,
    pub contract_id: String,
    pub evidence: Vec<Evidence>,
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RulesConfig {
    pub volume_threshold: u64,
    pub probing_threshold: u64,
    pub window: u64,
}

impl Default for RulesConfig {
    fn default() -> Self {
        RulesConfig {
            volume_threshold: 10_000,
            probing_threshold: 5,
            window: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad monitor config: {0}")]
pub struct BadConfig(pub String);

impl RulesConfig {
    pub fn new(volume_threshold: u64, probing_threshold: u64, window: u64) -> Result<Self, BadConfig> {
        for (name, v) in [
            ("volume_threshold", volume_threshold),
            ("probing_threshold", probing_threshold),
            ("window", window),
        ] {
            if v == 0 {
                return Err(BadConfig(format!("{name} must be positive")));
            }
        }
        Ok(RulesConfig {
            volume_threshold,
            probing_threshold,
            window,
        })
    }
}

#[derive(Debug, Default, Clone)]
struct SessionState {
    show_tables: Option<u64>,
    enumeration_raised: bool,
    cumulative_rows: u64,
    row_events: Vec<u64>,
    volume_raised: bool,
    denials: VecDeque<(Timestamp, u64)>,
}

/// Filter for [`Monitor::alerts`]. Unset fields match everything; the time
/// range is inclusive.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertFilter {
    pub contract_id: Option<String>,
    pub enclave_id: Option<String>,
    pub rule: Option<Rule>,
    pub since: Option<Timestamp>,
    pub until: Option<Timestamp>,
}

impl AlertFilter {
    fn matches(&self, a: &Alert) -> bool {
        self.contract_id.as_ref().is_none_or(|c| *c == a.contract_id)
            && self
                .enclave_id
                .as_ref()
                .is_none_or(|e| a.enclave_id.as_ref() == Some(e))
            && self.rule.is_none_or(|r| r == a.rule)
            && self.since.is_none_or(|t| a.timestamp >= t)
            && self.until.is_none_or(|t| a.timestamp <= t)
    }
}

#[derive(Debug, Default)]
pub struct Monitor {
    config: RulesConfig,
    events: Vec<MonitorEvent>,
    alerts: Vec<Alert>,
    sessions: HashMap<String, SessionState>,
}

impl Monitor {
    pub fn new(config: RulesConfig) -> Self {
        Monitor {
            config,
            ..Default::default()
        }
    }

    pub fn config(&self) -> RulesConfig {
        self.config
    }

    pub fn rules_config(
        &mut self,
        volume_threshold: u64,
        probing_threshold: u64,
        window: u64,
    ) -> Result<(), BadConfig> {
        self.config = RulesConfig::new(volume_threshold, probing_threshold, window)?;
        Ok(())
    }

    pub fn events(&self) -> &[MonitorEvent] {
        &self.events
    }

    fn alert(&self, rule: Rule, ev: &MonitorEvent, evidence: Vec<Evidence>, offset: usize) -> Alert {
        Alert {
            alert_id: format!("alert-{}", self.alerts.len() + offset + 1),
            rule,
            severity: rule.severity(),
            session_id: Some(ev.session_id.clone()),
            enclave_id: Some(ev.enclave_id.clone()),
            contract_id: ev.contract_id.clone(),
            evidence,
            timestamp: ev.timestamp,
        }
    }

    /// Records one event and returns the alerts it raised.
    pub fn record_event(&mut self, mut ev: MonitorEvent) -> Vec<Alert> {
        ev.index = self.events.len() as u64;
        let idx = ev.index;
        let cfg = self.config;
        let state = self.sessions.entry(ev.session_id.clone()).or_default();
        let mut raised: Vec<(Rule, Vec<Evidence>)> = Vec::new();

        if ev.kind == EventKind::CopyInto {
            raised.push((Rule::ExfiltrationAttempt, vec![Evidence::Event(idx)]));
        }

        match ev.kind {
            EventKind::ShowTables if state.show_tables.is_none() => state.show_tables = Some(idx),
            EventKind::StarSelect if !state.enumeration_raised => {
                if let Some(show) = state.show_tables {
                    state.enumeration_raised = true;
                    raised.push((
                        Rule::EnumerationPattern,
                        vec![Evidence::Event(show), Evidence::Event(idx)],
                    ));
                }
            }
            _ => {}
        }

        if ev.rows_returned > 0 {
            state.cumulative_rows = state.cumulative_rows.saturating_add(ev.rows_returned);
            state.row_events.push(idx);
            if !state.volume_raised && state.cumulative_rows > cfg.volume_threshold {
                state.volume_raised = true;
                raised.push((
                    Rule::VolumeDeviation,
                    state.row_events.iter().map(|&i| Evidence::Event(i)).collect(),
                ));
            }
        }

        if ev.verdict == Verdict::Deny {
            state.denials.push_back((ev.timestamp, idx));
            let window = i64::try_from(cfg.window).unwrap_or(i64::MAX);
            while state
                .denials
                .front()
                .is_some_and(|&(t, _)| ev.timestamp.saturating_sub(t) >= window)
            {
                state.denials.pop_front();
            }
            if state.denials.len() as u64 >= cfg.probing_threshold {
                let evidence = state.denials.drain(..).map(|(_, i)| Evidence::Event(i)).collect();
                raised.push((Rule::ProbingDenials, evidence));
            }
        }

        let alerts: Vec<Alert> = raised
            .into_iter()
            .enumerate()
            .map(|(k, (rule, evidence))| self.alert(rule, &ev, evidence, k))
            .collect();
        self.events.push(ev);
        self.alerts.extend(alerts.iter().cloned());
        alerts
    }

    /// Critical alert for a break-glass activation.
    pub fn raise_break_glass(
        &mut self,
        request_id: &str,
        contract_id: &str,
        enclave_id: Option<&str>,
        now: Timestamp,
    ) -> Alert {
        let alert = Alert {
            alert_id: format!("alert-{}", self.alerts.len() + 1),
            rule: Rule::BreakGlassActivated,
            severity: Severity::Critical,
            session_id: None,
            enclave_id: enclave_id.map(str::to_string),
            contract_id: contract_id.to_string(),
            evidence: vec![Evidence::BreakGlassRequest(request_id.to_string())],
            timestamp: now,
        };
        self.alerts.push(alert.clone());
        alert
    }

    /// Matching alerts in raise order.
    pub fn alerts(&self, filter: &AlertFilter) -> Vec<Alert> {
        self.alerts.iter().filter(|a| filter.matches(a)).cloned().collect()
    }
}
