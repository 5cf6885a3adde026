//! Line-oriented session scripts.
//!
//! ```text
//! # comments and blank lines are ignored
//! open /data/head.nii.gz modality=mr target=tumor
//! navigate 20
//! command segment the tumor
//! confirm
//! prompt + 26 22
//! prompt - 10 10
//! clear
//! refine
//! propagate break=off threshold=0.3 directions=both max_steps=10
//! reseed
//! complete
//! complete confirm
//! mesh context=300
//! guidance query
//! trial id=t1 paradigm=interactive accuracy=91.5 tlx=35 time=120
//! ```
//!
//! A leading `?` lets a step fail without stopping the script.

use serde_json::{json, Value};

use medseg_core::metrics::TrialRecord;
use medseg_core::protocol::*;
use medseg_core::propagation::Directions;
use medseg_core::segmenter::Polarity;
use medseg_core::session::GuidanceMode;

use crate::{Client, ClientError};

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Open { volume_ref: String, modality: Option<String>, target: Option<String> },
    Attach(String),
    Navigate(usize),
    Command(String),
    Confirm,
    Prompt { x: usize, y: usize, polarity: Polarity },
    Clear,
    Refine,
    Propagate(PropagateRequest),
    Reseed,
    Complete { confirm: bool },
    Mesh(MeshRequest),
    Guidance(GuidanceMode),
    Trial { id: String, paradigm: String, accuracy: f64, tlx: f64, time: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub number: usize,
    pub step: Step,
    pub may_fail: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("line {line}: {message}")]
pub struct ScriptError {
    pub line: usize,
    pub message: String,
}

fn options(words: &[&str]) -> Result<Vec<(String, String)>, String> {
    words
        .iter()
        .map(|w| match w.split_once('=') {
            Some((k, v)) => Ok((k.to_string(), v.to_string())),
            None => Err(format!("expected key=value, got {w:?}")),
        })
        .collect()
}

fn num<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("bad {what} {s:?}"))
}

fn parse_step(words: &[&str]) -> Result<Step, String> {
    let (&verb, rest) = words.split_first().expect("non-empty line");
    let arity = |n: usize| {
        if rest.len() == n {
            Ok(())
        } else {
            Err(format!("{verb} takes {n} argument(s)"))
        }
    };
    Ok(match verb {
        "open" => {
            let (&path, rest) = rest.split_first().ok_or("open needs a volume path")?;
            let mut step = Step::Open { volume_ref: path.to_string(), modality: None, target: None };
            for (k, v) in options(rest)? {
                let Step::Open { modality, target, .. } = &mut step else { unreachable!() };
                match k.as_str() {
                    "modality" => *modality = Some(v),
                    "target" => *target = Some(v),
                    _ => return Err(format!("unknown open option {k:?}")),
                }
            }
            step
        }
        "attach" => {
            arity(1)?;
            Step::Attach(rest[0].to_string())
        }
        "navigate" => {
            arity(1)?;
            Step::Navigate(num("slice index", rest[0])?)
        }
        "command" => {
            if rest.is_empty() {
                return Err("command needs text".into());
            }
            Step::Command(rest.join(" "))
        }
        "confirm" => {
            arity(0)?;
            Step::Confirm
        }
        "prompt" => {
            arity(3)?;
            let polarity = match rest[0] {
                "+" | "pos" | "positive" => Polarity::Positive,
                "-" | "neg" | "negative" => Polarity::Negative,
                p => return Err(format!("polarity must be + or -, got {p:?}")),
            };
            Step::Prompt { x: num("x", rest[1])?, y: num("y", rest[2])?, polarity }
        }
        "clear" => {
            arity(0)?;
            Step::Clear
        }
        "refine" => {
            arity(0)?;
            Step::Refine
        }
        "propagate" => {
            let mut req = PropagateRequest::default();
            for (k, v) in options(rest)? {
                match k.as_str() {
                    "break" => {
                        req.break_enabled = Some(match v.as_str() {
                            "on" | "true" => true,
                            "off" | "false" => false,
                            _ => return Err(format!("break must be on or off, got {v:?}")),
                        })
                    }
                    "threshold" => req.iou_break_threshold = Some(num("threshold", &v)?),
                    "max_steps" => req.max_steps_per_direction = Some(num("max_steps", &v)?),
                    "directions" => {
                        req.directions = Some(
                            serde_json::from_value::<Directions>(Value::String(v.clone()))
                                .map_err(|_| format!("bad directions {v:?}"))?,
                        )
                    }
                    _ => return Err(format!("unknown propagate option {k:?}")),
                }
            }
            Step::Propagate(req)
        }
        "reseed" => {
            arity(0)?;
            Step::Reseed
        }
        "complete" => match rest {
            [] => Step::Complete { confirm: false },
            ["confirm"] => Step::Complete { confirm: true },
            _ => return Err("complete takes an optional 'confirm'".into()),
        },
        "mesh" => {
            let mut req = MeshRequest::default();
            for w in rest {
                match w.split_once('=') {
                    None if *w == "context" => req.include_context = true,
                    Some(("context", v)) => req.context_threshold = Some(num("context threshold", v)?),
                    _ => return Err(format!("unknown mesh option {w:?}")),
                }
            }
            Step::Mesh(req)
        }
        "guidance" => {
            arity(1)?;
            Step::Guidance(match rest[0] {
                "general" => GuidanceMode::General,
                "query" | "query_specific" => GuidanceMode::QuerySpecific,
                m => return Err(format!("guidance mode must be general or query, got {m:?}")),
            })
        }
        "trial" => {
            let mut id = None;
            let mut paradigm = None;
            let (mut accuracy, mut tlx, mut time) = (None, None, None);
            for (k, v) in options(rest)? {
                match k.as_str() {
                    "id" => id = Some(v),
                    "paradigm" => paradigm = Some(v),
                    "accuracy" => accuracy = Some(num("accuracy", &v)?),
                    "tlx" => tlx = Some(num("tlx", &v)?),
                    "time" => time = Some(num("time", &v)?),
                    _ => return Err(format!("unknown trial field {k:?}")),
                }
            }
            let missing = |f: &str| format!("trial needs {f}=");
            Step::Trial {
                id: id.ok_or_else(|| missing("id"))?,
                paradigm: paradigm.ok_or_else(|| missing("paradigm"))?,
                accuracy: accuracy.ok_or_else(|| missing("accuracy"))?,
                tlx: tlx.ok_or_else(|| missing("tlx"))?,
                time: time.ok_or_else(|| missing("time"))?,
            }
        }
        _ => return Err(format!("unknown step {verb:?}")),
    })
}

pub fn parse(text: &str) -> Result<Vec<Line>, ScriptError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (may_fail, line) = match line.strip_prefix('?') {
            Some(l) => (true, l.trim_start()),
            None => (false, line),
        };
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            return Err(ScriptError { line: i + 1, message: "'?' needs a step".into() });
        }
        let step = parse_step(&words).map_err(|message| ScriptError { line: i + 1, message })?;
        out.push(Line { number: i + 1, step, may_fail });
    }
    Ok(out)
}

/// What one executed step produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub line: usize,
    pub kind: &'static str,
    pub result: Result<Value, String>,
    pub updates: usize,
}

impl Outcome {
    /// One JSON object with large base64 fields replaced by their length.
    pub fn summary(&self) -> Value {
        let mut v = json!({ "line": self.line, "kind": self.kind, "updates": self.updates });
        match &self.result {
            Ok(reply) => {
                v["ok"] = json!(true);
                v["reply"] = redact(reply.clone());
            }
            Err(e) => {
                v["ok"] = json!(false);
                v["error"] = json!(e);
            }
        }
        v
    }
}

fn redact(v: Value) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, v)| match (k.as_str(), &v) {
                    ("pixels", Value::String(s)) => (k, json!(format!("<{} base64 chars>", s.len()))),
                    ("counts", Value::Array(a)) => (k, json!(format!("<{} runs>", a.len()))),
                    _ => (k, redact(v)),
                })
                .collect(),
        ),
        Value::Array(a) => Value::Array(a.into_iter().map(redact).collect()),
        other => other,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("line {line} ({kind}) failed: {source}")]
    Step {
        line: usize,
        kind: &'static str,
        #[source]
        source: ClientError,
    },
}

async fn exec(client: &mut Client, step: &Step, counters: &mut (u64, u64)) -> Result<(Value, usize), ClientError> {
    let val = |r: Result<Value, ClientError>| r.map(|v| (v, 0));
    match step {
        Step::Open { volume_ref, modality, target } => val(client
            .open(volume_ref, modality.as_deref(), target.as_deref())
            .await
            .map(|r| encode_payload(&r))),
        Step::Attach(id) => val(client.attach(id).await.map(|r| encode_payload(&r))),
        Step::Navigate(i) => val(client.navigate(*i).await.map(|r| encode_payload(&r))),
        Step::Command(t) => val(client.submit_command(t).await.map(|r| encode_payload(&r))),
        Step::Confirm => val(client.confirm_command().await.map(|r| encode_payload(&r))),
        Step::Prompt { x, y, polarity } => {
            let ack = client.add_prompt(*x, *y, *polarity).await?;
            *counters = (ack.confirmed_points, ack.clears);
            Ok((encode_payload(&ack), 0))
        }
        Step::Clear => {
            let ack = client.clear_prompts().await?;
            *counters = (ack.confirmed_points, ack.clears);
            Ok((encode_payload(&ack), 0))
        }
        Step::Refine => val(client.refine().await.map(|r| encode_payload(&r))),
        Step::Propagate(req) => {
            let (done, updates) = client.propagate(req).await?;
            Ok((encode_payload(&done), updates.len()))
        }
        Step::Reseed => val(client.reseed().await.map(|r| encode_payload(&r))),
        Step::Complete { confirm } => val(client.complete(*confirm).await.map(|r| encode_payload(&r))),
        Step::Mesh(req) => val(client.request_mesh(req).await.map(|r| encode_payload(&r))),
        Step::Guidance(mode) => val(client.guidance(*mode).await.map(|r| encode_payload(&r))),
        Step::Trial { id, paradigm, accuracy, tlx, time } => {
            let trial = TrialRecord {
                trial_id: id.clone(),
                paradigm: paradigm.clone(),
                accuracy: *accuracy,
                tlx_total: *tlx,
                time: *time,
                confirmed: counters.0,
                clears: counters.1,
            };
            val(client.log_trial(trial).await.map(|r| encode_payload(&r)))
        }
    }
}

pub fn step_kind(step: &Step) -> &'static str {
    match step {
        Step::Open { .. } | Step::Attach(_) => OPEN_SESSION,
        Step::Navigate(_) => NAVIGATE,
        Step::Command(_) => SUBMIT_COMMAND,
        Step::Confirm => CONFIRM_COMMAND,
        Step::Prompt { .. } => ADD_PROMPT,
        Step::Clear => CLEAR_PROMPTS,
        Step::Refine => REFINE,
        Step::Propagate(_) => PROPAGATE,
        Step::Reseed => RESEED,
        Step::Complete { .. } => COMPLETE,
        Step::Mesh(_) => REQUEST_MESH,
        Step::Guidance(_) => GUIDANCE,
        Step::Trial { .. } => LOG_TRIAL,
    }
}

/// Runs `lines` in order, calling `each` after every step. Stops at the
/// first failing step not marked `?`.
pub async fn run(client: &mut Client, lines: &[Line], mut each: impl FnMut(&Outcome)) -> Result<Vec<Outcome>, RunError> {
    let mut counters = (0, 0);
    let mut out = Vec::new();
    for line in lines {
        let kind = step_kind(&line.step);
        let res = exec(client, &line.step, &mut counters).await;
        let (result, updates) = match &res {
            Ok((v, n)) => (Ok(v.clone()), *n),
            Err(e) => (Err(e.to_string()), 0),
        };
        let outcome = Outcome { line: line.number, kind, result, updates };
        each(&outcome);
        out.push(outcome);
        if let Err(source) = res {
            if !line.may_fail {
                return Err(RunError::Step { line: line.number, kind, source });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_step() {
        let text = "\
# demo
open /tmp/v.nii.gz modality=mr target=tumor
navigate 20
command segment the   tumor
confirm
prompt + 3 4
? prompt neg 1 2
clear
refine
propagate break=off threshold=0.25 directions=superior max_steps=4
reseed
complete
complete confirm
mesh context=300
mesh context
guidance query
trial id=t1 paradigm=interactive accuracy=90 tlx=30.5 time=61
";
        let lines = parse(text).unwrap();
        assert_eq!(lines.len(), 16);
        assert_eq!(lines[0].number, 2);
        assert_eq!(lines[2].step, Step::Command("segment the tumor".into()));
        assert!(lines[5].may_fail);
        assert_eq!(lines[5].step, Step::Prompt { x: 1, y: 2, polarity: Polarity::Negative });
        let Step::Propagate(p) = &lines[8].step else { panic!() };
        assert_eq!(p.break_enabled, Some(false));
        assert_eq!(p.directions, Some(Directions::Superior));
        assert_eq!(p.max_steps_per_direction, Some(4));
        assert_eq!(lines[12].step, Step::Mesh(MeshRequest { context_threshold: Some(300.0), include_context: false }));
        assert_eq!(lines[13].step, Step::Mesh(MeshRequest { context_threshold: None, include_context: true }));
    }

    #[test]
    fn reports_line_numbers() {
        let err = parse("open a\n\nprompt x 1 2\n").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(parse("navigate").is_err());
        assert!(parse("propagate break=maybe").is_err());
        assert!(parse("trial id=a paradigm=b accuracy=1 tlx=2").is_err());
        assert!(parse("teleport 3").is_err());
    }

    #[test]
    fn redacts_bulk_fields() {
        let v = redact(json!({"slice": {"pixels": "AAAA"}, "mask": {"counts": [1, 2, 3]}}));
        assert_eq!(v["slice"]["pixels"], "<4 base64 chars>");
        assert_eq!(v["mask"]["counts"], "<3 runs>");
    }
}
