//! Run a workflow through a shell command and parse its RESULT line.
//!
//! Grammar (single spaces, keys in this order, on one line of stdout):
//!
//! ```text
//! RESULT exec_s=<float> nodes=<uint> cores_per_node=<uint> comp_times=<float>(,<float>)*
//! ```
//!
//! Floats use Rust's `f64` syntax with a dot decimal separator. Exactly one
//! such line must appear; other lines are ignored. `exec_s` must equal the
//! maximum of `comp_times`.

use std::io::Read;
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use super::{computer_time, Executor, Measurement, Provenance, Status};
use crate::error::{Error, Result};
use crate::parallel;
use crate::space::Configuration;

const POLL_INTERVAL: Duration = Duration::from_millis(5);
const DIAGNOSTIC_TAIL: usize = 2000;

/// Parsed RESULT line.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultLine {
    pub exec_s: f64,
    pub nodes: u32,
    pub cores_per_node: u32,
    pub comp_times: Vec<f64>,
}

fn field<'a>(token: Option<&'a str>, key: &str) -> std::result::Result<&'a str, String> {
    let token = token.ok_or_else(|| format!("missing `{key}=`"))?;
    token
        .strip_prefix(key)
        .and_then(|t| t.strip_prefix('='))
        .ok_or_else(|| format!("expected `{key}=`, found `{token}`"))
}

fn float(s: &str, key: &str) -> std::result::Result<f64, String> {
    let v: f64 = s
        .parse()
        .map_err(|_| format!("bad float `{s}` for {key}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite {key}"));
    }
    Ok(v)
}

pub fn parse_result_line(line: &str) -> std::result::Result<ResultLine, String> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut tokens = line.split(' ');
    if tokens.next() != Some("RESULT") {
        return Err("line does not start with `RESULT `".into());
    }
    let exec_s = float(field(tokens.next(), "exec_s")?, "exec_s")?;
    let nodes_s = field(tokens.next(), "nodes")?;
    let nodes = nodes_s
        .parse()
        .map_err(|_| format!("bad integer `{nodes_s}` for nodes"))?;
    let cpn_s = field(tokens.next(), "cores_per_node")?;
    let cores_per_node = cpn_s
        .parse()
        .map_err(|_| format!("bad integer `{cpn_s}` for cores_per_node"))?;
    let comp = field(tokens.next(), "comp_times")?;
    let comp_times = comp
        .split(',')
        .map(|s| float(s, "comp_times"))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if let Some(extra) = tokens.next() {
        return Err(format!("unexpected trailing token `{extra}`"));
    }
    Ok(ResultLine {
        exec_s,
        nodes,
        cores_per_node,
        comp_times,
    })
}

fn format_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn slots(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            None => break,
        }
    }
    out
}

/// Replace every `{name}` slot. Integral values print without a fraction.
pub fn substitute(template: &str, names: &[String], c: &Configuration) -> Result<String> {
    if names.len() != c.len() {
        return Err(Error::Structure(format!(
            "{} names for {} values",
            names.len(),
            c.len()
        )));
    }
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| Error::Config(format!("unterminated slot in `{template}`")))?;
        let name = &after[..close];
        let i = names.iter().position(|n| n == name).ok_or_else(|| {
            Error::Config(format!("template slot `{{{name}}}` is not a parameter"))
        })?;
        out.push_str(&format_value(c.values()[i]));
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn check_template(template: &str, names: &[String]) -> Result<()> {
    let used = slots(template);
    for s in &used {
        if !names.iter().any(|n| n == s) {
            return Err(Error::Config(format!(
                "template slot `{{{s}}}` is not a parameter"
            )));
        }
    }
    for n in names {
        if !used.contains(&n.as_str()) {
            log::warn!("command template does not reference parameter `{n}`");
        }
    }
    Ok(())
}

fn tail(s: &str) -> &str {
    let start = s.len().saturating_sub(DIAGNOSTIC_TAIL);
    let mut i = start;
    while !s.is_char_boundary(i) {
        i += 1;
    }
    s[i..].trim()
}

fn read_pipe<R: Read + Send + 'static>(pipe: Option<R>) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        if let Some(mut p) = pipe {
            let _ = p.read_to_end(&mut buf);
        }
        String::from_utf8_lossy(&buf).into_owned()
    })
}

/// Run `command` under `sh -c`; returns a failed measurement on nonzero
/// exit, timeout, or an unparsable RESULT line.
pub fn run_command(command: &str, c: &Configuration, timeout: Duration) -> Measurement {
    let failed = |msg: String| Measurement::failed(c.clone(), Provenance::External, msg);
    let mut child = match Command::new("sh")
        .arg("-c")
        .arg(command)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
    {
        Ok(ch) => ch,
        Err(e) => return failed(format!("spawn failed: {e}")),
    };
    let out = read_pipe(child.stdout.take());
    let err = read_pipe(child.stderr.take());
    let start = Instant::now();
    let status = loop {
        match child.try_wait() {
            Ok(Some(s)) => break Some(s),
            Ok(None) if start.elapsed() >= timeout => {
                let _ = child.kill();
                let _ = child.wait();
                break None;
            }
            Ok(None) => thread::sleep(POLL_INTERVAL),
            Err(e) => return failed(format!("wait failed: {e}")),
        }
    };
    let stdout = out.join().unwrap_or_default();
    let stderr = err.join().unwrap_or_default();
    let Some(status) = status else {
        return failed(format!("timed out after {:.3} s", timeout.as_secs_f64()));
    };
    if !status.success() {
        return failed(format!("exit status {status}; stderr: {}", tail(&stderr)));
    }
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("RESULT")).collect();
    let line = match lines.as_slice() {
        [one] => *one,
        [] => return failed(format!("no RESULT line; stdout: {}", tail(&stdout))),
        _ => return failed(format!("{} RESULT lines", lines.len())),
    };
    let parsed = match parse_result_line(line) {
        Ok(p) => p,
        Err(e) => return failed(format!("parse error: {e}")),
    };
    let max = parsed.comp_times.iter().copied().fold(f64::MIN, f64::max);
    if (parsed.exec_s - max).abs() > 1e-9 * max.abs().max(1.0) {
        return failed(format!(
            "exec_s={} differs from max(comp_times)={max}",
            parsed.exec_s
        ));
    }
    if parsed.comp_times.iter().any(|&t| t <= 0.0) {
        return failed("comp_times must be positive".into());
    }
    Measurement {
        configuration: c.clone(),
        computer_time: computer_time(parsed.exec_s, parsed.nodes, parsed.cores_per_node),
        execution_time: parsed.exec_s,
        component_times: parsed.comp_times,
        nodes: parsed.nodes,
        cores_per_node: parsed.cores_per_node,
        status: Status::Ok,
        provenance: Provenance::External,
        diagnostic: None,
    }
}

/// `external_measure`: substitute and run one template.
pub fn external_measure(
    template: &str,
    names: &[String],
    c: &Configuration,
    timeout: Duration,
) -> Measurement {
    match substitute(template, names, c) {
        Ok(cmd) => run_command(&cmd, c, timeout),
        Err(e) => Measurement::failed(c.clone(), Provenance::External, e.to_string()),
    }
}

#[derive(Clone, Debug)]
pub struct ExternalExecutor {
    workflow_command: String,
    workflow_names: Vec<String>,
    component_commands: Vec<Option<String>>,
    component_names: Vec<Vec<String>>,
    timeout: Duration,
    concurrent: bool,
}

impl ExternalExecutor {
    pub fn new(
        workflow_command: String,
        workflow_names: Vec<String>,
        components: Vec<(Option<String>, Vec<String>)>,
        timeout: Duration,
        concurrent: bool,
    ) -> Result<Self> {
        check_template(&workflow_command, &workflow_names)?;
        for (cmd, names) in &components {
            if let Some(cmd) = cmd {
                check_template(cmd, names)?;
            }
        }
        let (component_commands, component_names) = components.into_iter().unzip();
        Ok(Self {
            workflow_command,
            workflow_names,
            component_commands,
            component_names,
            timeout,
            concurrent,
        })
    }
}

impl Executor for ExternalExecutor {
    fn measure_workflow(&self, config: &Configuration) -> Measurement {
        external_measure(
            &self.workflow_command,
            &self.workflow_names,
            config,
            self.timeout,
        )
    }

    fn measure_component(&self, component: usize, config: &Configuration) -> Measurement {
        match self.component_commands.get(component) {
            Some(Some(cmd)) => {
                external_measure(cmd, &self.component_names[component], config, self.timeout)
            }
            _ => Measurement::failed(
                config.clone(),
                Provenance::External,
                format!("no command configured for component {component}"),
            ),
        }
    }

    fn measure_batch(&self, configs: &[Configuration]) -> Vec<Measurement> {
        if self.concurrent {
            parallel::map(configs, |c| self.measure_workflow(c))
        } else {
            configs.iter().map(|c| self.measure_workflow(c)).collect()
        }
    }
}
