//! The topology config: `key = value` lines, `#` starts a comment.
//!
//! ```text
//! app = shop
//! listen = 127.0.0.1:8080          # shadower, the client-facing port
//! upstream = 127.0.0.1:8081        # production application
//! control = 127.0.0.1:8082         # control API
//! session_header = x-session
//! patch_queue = 64
//! regression_queue = 1024
//! mirror_queue = 1024
//! mirror.staging = 127.0.0.1:9000  # any number of raw duplicate targets
//! oracle = content
//! ```

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use shadowfix_core::app::SESSION_HEADER;
use shadowfix_core::oracles::Oracle;
use shadowfix_core::profile::Scenario;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
#[error("config line {line}: {message}")]
pub struct BadConfig {
    /// 1-based; 0 for whole-file problems.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub app: String,
    pub scenario: Option<Scenario>,
    pub listen: SocketAddr,
    pub upstream: SocketAddr,
    pub control: SocketAddr,
    pub session_header: String,
    pub patch_queue: usize,
    pub regression_queue: usize,
    pub mirror_queue: usize,
    /// Named targets receiving a raw copy of every request, sessions translated.
    pub mirrors: Vec<(String, SocketAddr)>,
    pub oracle: Oracle,
    pub search_delay: Duration,
    pub store_op_latency: Duration,
    /// JSON-lines copy of the event log, appended as records arrive.
    pub event_log: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        let local = |port| SocketAddr::from(([127, 0, 0, 1], port));
        Config {
            app: "shop".into(),
            scenario: None,
            listen: local(8080),
            upstream: local(8081),
            control: local(8082),
            session_header: SESSION_HEADER.into(),
            patch_queue: 64,
            regression_queue: 1024,
            mirror_queue: 1024,
            mirrors: Vec::new(),
            oracle: Oracle::Content,
            search_delay: Duration::ZERO,
            store_op_latency: Duration::ZERO,
            event_log: None,
        }
    }
}

impl Config {
    /// Unknown keys, duplicate keys and malformed values are errors; missing keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Config, BadConfig> {
        let mut c = Config::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let bad = |message: String| BadConfig { line, message };
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| bad(format!("expected `key = value`, got `{content}`")))?;
            if value.is_empty() {
                return Err(bad(format!("`{key}` has no value")));
            }
            if !seen.insert(key.to_string()) {
                return Err(bad(format!("`{key}` given twice")));
            }
            let addr = |v: &str| v.parse::<SocketAddr>().map_err(|e| bad(format!("`{key}`: {e}")));
            let count = |v: &str| match v.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(bad(format!("`{key}` must be a positive integer"))),
            };
            let millis = |v: &str| {
                v.parse::<u64>()
                    .map_err(|_| bad(format!("`{key}` must be a whole number")))
            };
            match key {
                "app" => c.app = value.to_string(),
                "scenario" => {
                    c.scenario = match value {
                        "none" => None,
                        s => Some(Scenario::from_name(s).ok_or_else(|| bad(format!("unknown scenario `{s}`")))?),
                    }
                }
                "listen" => c.listen = addr(value)?,
                "upstream" => c.upstream = addr(value)?,
                "control" => c.control = addr(value)?,
                "session_header" => c.session_header = value.to_ascii_lowercase(),
                "patch_queue" => c.patch_queue = count(value)?,
                "regression_queue" => c.regression_queue = count(value)?,
                "mirror_queue" => c.mirror_queue = count(value)?,
                "oracle" => c.oracle = value.parse().map_err(|_| bad(format!("unknown oracle `{value}`")))?,
                "search_delay_ms" => c.search_delay = Duration::from_millis(millis(value)?),
                "store_op_latency_us" => c.store_op_latency = Duration::from_micros(millis(value)?),
                "event_log" => c.event_log = Some(PathBuf::from(value)),
                k => match k.strip_prefix("mirror.") {
                    Some(name) if !name.is_empty() => c.mirrors.push((name.to_string(), addr(value)?)),
                    _ => return Err(bad(format!("unknown key `{k}`"))),
                },
            }
        }
        let ports = [c.listen, c.upstream, c.control];
        if ports.iter().enumerate().any(|(i, a)| a.port() != 0 && ports[..i].contains(a)) {
            return Err(BadConfig {
                line: 0,
                message: "listen, upstream and control must be distinct".into(),
            });
        }
        Ok(c)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "app = {}\nscenario = {}\nlisten = {}\nupstream = {}\ncontrol = {}\nsession_header = {}\n\
             patch_queue = {}\nregression_queue = {}\nmirror_queue = {}\noracle = {}\n\
             search_delay_ms = {}\nstore_op_latency_us = {}\n",
            self.app,
            self.scenario.map_or("none", Scenario::name),
            self.listen,
            self.upstream,
            self.control,
            self.session_header,
            self.patch_queue,
            self.regression_queue,
            self.mirror_queue,
            self.oracle.name(),
            self.search_delay.as_millis(),
            self.store_op_latency.as_micros(),
        );
        for (name, addr) in &self.mirrors {
            out.push_str(&format!("mirror.{name} = {addr}\n"));
        }
        if let Some(p) = &self.event_log {
            out.push_str(&format!("event_log = {}\n", p.display()));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default() {
        assert_eq!(Config::parse("# nothing\n\n").unwrap(), Config::default());
    }

    #[test]
    fn every_key_parses_and_round_trips() {
        let text = "app = shop\nscenario = shipping\nlisten = 127.0.0.1:1\nupstream = 127.0.0.1:2\n\
                    control = 127.0.0.1:3 # trailing comment\nsession_header = X-Session\n\
                    patch_queue = 2\nregression_queue = 3\nmirror_queue = 4\n\
                    mirror.a = 127.0.0.1:5\nmirror.b = 127.0.0.1:6\noracle = block-coverage\n\
                    search_delay_ms = 500\nstore_op_latency_us = 250\nevent_log = /tmp/e.jsonl\n";
        let c = Config::parse(text).unwrap();
        assert_eq!(c.scenario, Some(Scenario::Shipping));
        assert_eq!(c.session_header, "x-session");
        assert_eq!(c.mirrors.len(), 2);
        assert_eq!(c.oracle, Oracle::BlockCoverage);
        assert_eq!(c.search_delay, Duration::from_millis(500));
        assert_eq!(c.store_op_latency, Duration::from_micros(250));
        assert_eq!(Config::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [
            ("listen = nowhere", 1),
            ("\npatch_queue = 0", 2),
            ("colour = blue", 1),
            ("app = shop\napp = shop", 2),
            ("just words", 1),
            ("oracle = psychic", 1),
            ("mirror. = 127.0.0.1:1", 1),
            ("listen = 127.0.0.1:9\ncontrol = 127.0.0.1:9", 0),
        ] {
            assert_eq!(Config::parse(text).unwrap_err().line, line, "{text}");
        }
    }
}
