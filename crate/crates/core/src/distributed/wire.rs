//! Newline-delimited JSON frames.
//!
//! ```text
//! {"v":1,"type":"req","baseline_set":..,"explicand":..,"baseline":..,"score":..,"value":..}
//! {"v":1,"type":"resp","baseline_set":..,"explicand":..,"baseline":..,"score":..,"attrs":{..},"score_delta":..}
//! {"v":1,"type":"err","code":..,"message":..}
//! ```
//!
//! Fields are written in the order above; floats carry 17 significant digits.

use serde_json::{Map, Value};
use thiserror::Error;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unsupported protocol version {0}")]
    Version(String),
    #[error("baseline set mismatch: {0}")]
    BaselineMismatch(String),
    #[error("unknown sample: {0}")]
    UnknownSample(String),
    #[error("unknown score: {0}")]
    UnknownScore(String),
    #[error("node computation failed: {0}")]
    Computation(String),
    #[error("response rejected: {0}")]
    Rejected(String),
    #[error("transport failure: {0}")]
    Transport(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => "malformed",
            ProtocolError::Version(_) => "version",
            ProtocolError::BaselineMismatch(_) => "baseline_mismatch",
            ProtocolError::UnknownSample(_) => "unknown_sample",
            ProtocolError::UnknownScore(_) => "unknown_score",
            ProtocolError::Computation(_) => "computation",
            ProtocolError::Rejected(_) => "rejected",
            ProtocolError::Transport(_) => "transport",
        }
    }

    pub fn detail(&self) -> &str {
        match self {
            ProtocolError::Malformed(m)
            | ProtocolError::Version(m)
            | ProtocolError::BaselineMismatch(m)
            | ProtocolError::UnknownSample(m)
            | ProtocolError::UnknownScore(m)
            | ProtocolError::Computation(m)
            | ProtocolError::Rejected(m)
            | ProtocolError::Transport(m) => m,
        }
    }

    /// Rebuilds the typed error carried by an `err` frame.
    pub fn from_code(code: &str, message: String) -> Self {
        match code {
            "malformed" => ProtocolError::Malformed(message),
            "version" => ProtocolError::Version(message),
            "baseline_mismatch" => ProtocolError::BaselineMismatch(message),
            "unknown_sample" => ProtocolError::UnknownSample(message),
            "unknown_score" => ProtocolError::UnknownScore(message),
            "rejected" => ProtocolError::Rejected(message),
            "transport" => ProtocolError::Transport(message),
            _ => ProtocolError::Computation(message),
        }
    }
}

/// Attribution of one score feature, for one (explicand, baseline) pair,
/// that the owning node should push back onto its raw features.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreAttributionRequest {
    pub baseline_set: String,
    pub explicand: String,
    pub baseline: String,
    pub score: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreAttributionResponse {
    pub baseline_set: String,
    pub explicand: String,
    pub baseline: String,
    pub score: String,
    /// Raw-feature attributions in the node's feature order.
    pub attrs: Vec<(String, f64)>,
    /// `score(explicand) - score(baseline)` as computed by the node.
    pub score_delta: f64,
}

impl ScoreAttributionResponse {
    pub fn answers(&self, req: &ScoreAttributionRequest) -> bool {
        self.baseline_set == req.baseline_set
            && self.explicand == req.explicand
            && self.baseline == req.baseline
            && self.score == req.score
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Request(ScoreAttributionRequest),
    Response(ScoreAttributionResponse),
    Error { code: String, message: String },
}

impl From<&ProtocolError> for Message {
    fn from(e: &ProtocolError) -> Self {
        Message::Error {
            code: e.code().to_string(),
            message: e.detail().to_string(),
        }
    }
}

fn float(v: f64) -> Result<String, ProtocolError> {
    if !v.is_finite() {
        return Err(ProtocolError::Malformed(format!("non-finite number {v}")));
    }
    Ok(format!("{v:.16e}"))
}

fn string(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// One frame, without the trailing newline.
pub fn encode_message(msg: &Message) -> Result<String, ProtocolError> {
    let mut out = format!("{{\"v\":{PROTOCOL_VERSION},");
    match msg {
        Message::Request(r) => {
            out += &format!(
                "\"type\":\"req\",\"baseline_set\":{},\"explicand\":{},\"baseline\":{},\"score\":{},\"value\":{}",
                string(&r.baseline_set),
                string(&r.explicand),
                string(&r.baseline),
                string(&r.score),
                float(r.value)?
            );
        }
        Message::Response(r) => {
            out += &format!(
                "\"type\":\"resp\",\"baseline_set\":{},\"explicand\":{},\"baseline\":{},\"score\":{},\"attrs\":{{",
                string(&r.baseline_set),
                string(&r.explicand),
                string(&r.baseline),
                string(&r.score),
            );
            for (i, (name, v)) in r.attrs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out += &format!("{}:{}", string(name), float(*v)?);
            }
            out += &format!("}},\"score_delta\":{}", float(r.score_delta)?);
        }
        Message::Error { code, message } => {
            out += &format!(
                "\"type\":\"err\",\"code\":{},\"message\":{}",
                string(code),
                string(message)
            );
        }
    }
    out.push('}');
    Ok(out)
}

struct Fields {
    map: Map<String, Value>,
    kind: &'static str,
}

impl Fields {
    fn take(&mut self, key: &str) -> Result<Value, ProtocolError> {
        self.map
            .remove(key)
            .ok_or_else(|| ProtocolError::Malformed(format!("{} frame missing `{key}`", self.kind)))
    }

    fn string(&mut self, key: &str) -> Result<String, ProtocolError> {
        match self.take(key)? {
            Value::String(s) => Ok(s),
            other => Err(ProtocolError::Malformed(format!(
                "`{key}` must be a string, got {other}"
            ))),
        }
    }

    fn number(&mut self, key: &str) -> Result<f64, ProtocolError> {
        number(key, &self.take(key)?)
    }

    fn finish(self) -> Result<(), ProtocolError> {
        match self.map.keys().next() {
            Some(extra) => Err(ProtocolError::Malformed(format!(
                "{} frame has unexpected field `{extra}`",
                self.kind
            ))),
            None => Ok(()),
        }
    }
}

fn number(key: &str, v: &Value) -> Result<f64, ProtocolError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| {
        ProtocolError::Malformed(format!("`{key}` must be a finite number, got {v}"))
    })
}

pub fn decode_message(frame: &str) -> Result<Message, ProtocolError> {
    let value: Value = serde_json::from_str(frame.trim_end_matches(['\n', '\r']))
        .map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    let Value::Object(mut map) = value else {
        return Err(ProtocolError::Malformed(
            "frame is not a JSON object".into(),
        ));
    };
    match map.remove("v") {
        None => return Err(ProtocolError::Malformed("frame missing `v`".into())),
        Some(Value::Number(n)) if n.as_u64() == Some(PROTOCOL_VERSION) => {}
        Some(Value::String(s)) => return Err(ProtocolError::Version(s)),
        Some(other) => return Err(ProtocolError::Version(other.to_string())),
    }
    let kind = match map.remove("type") {
        Some(Value::String(t)) => t,
        Some(other) => return Err(ProtocolError::Malformed(format!("bad frame type {other}"))),
        None => return Err(ProtocolError::Malformed("frame missing `type`".into())),
    };
    match kind.as_str() {
        "req" => {
            let mut f = Fields { map, kind: "req" };
            let msg = ScoreAttributionRequest {
                baseline_set: f.string("baseline_set")?,
                explicand: f.string("explicand")?,
                baseline: f.string("baseline")?,
                score: f.string("score")?,
                value: f.number("value")?,
            };
            f.finish()?;
            Ok(Message::Request(msg))
        }
        "resp" => {
            let mut f = Fields { map, kind: "resp" };
            let baseline_set = f.string("baseline_set")?;
            let explicand = f.string("explicand")?;
            let baseline = f.string("baseline")?;
            let score = f.string("score")?;
            let Value::Object(attrs) = f.take("attrs")? else {
                return Err(ProtocolError::Malformed("`attrs` must be an object".into()));
            };
            let attrs = attrs
                .iter()
                .map(|(k, v)| Ok((k.clone(), number(k, v)?)))
                .collect::<Result<Vec<_>, ProtocolError>>()?;
            let score_delta = f.number("score_delta")?;
            f.finish()?;
            Ok(Message::Response(ScoreAttributionResponse {
                baseline_set,
                explicand,
                baseline,
                score,
                attrs,
                score_delta,
            }))
        }
        "err" => {
            let mut f = Fields { map, kind: "err" };
            let code = f.string("code")?;
            let message = f.string("message")?;
            f.finish()?;
            Ok(Message::Error { code, message })
        }
        other => Err(ProtocolError::Malformed(format!(
            "unknown frame type `{other}`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn request() -> ScoreAttributionRequest {
        ScoreAttributionRequest {
            baseline_set: "ab12".into(),
            explicand: "e1".into(),
            baseline: "b7".into(),
            score: "credit".into(),
            value: 0.1,
        }
    }

    #[test]
    fn request_layout() {
        let frame = encode_message(&Message::Request(request())).unwrap();
        assert_eq!(
            frame,
            r#"{"v":1,"type":"req","baseline_set":"ab12","explicand":"e1","baseline":"b7","score":"credit","value":1.0000000000000001e-1}"#
        );
        assert_eq!(decode_message(&frame).unwrap(), Message::Request(request()));
    }

    #[test]
    fn missing_score_is_malformed() {
        let frame =
            r#"{"v":1,"type":"req","baseline_set":"a","explicand":"e","baseline":"b","value":1}"#;
        assert!(
            matches!(decode_message(frame), Err(ProtocolError::Malformed(m)) if m.contains("score"))
        );
    }

    #[test]
    fn version_mismatch() {
        let frame = r#"{"v":"2","type":"req","baseline_set":"a","explicand":"e","baseline":"b","score":"s","value":1}"#;
        assert!(matches!(decode_message(frame), Err(ProtocolError::Version(v)) if v == "2"));
        let frame = frame.replace("\"2\"", "2");
        assert!(matches!(
            decode_message(&frame),
            Err(ProtocolError::Version(_))
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let frame = r#"{"v":1,"type":"err","code":"x","message":"y","weights":[1]}"#;
        assert!(matches!(
            decode_message(frame),
            Err(ProtocolError::Malformed(_))
        ));
        assert!(decode_message("not json").is_err());
        assert!(decode_message("[1]").is_err());
    }

    #[test]
    fn non_finite_values_cannot_be_sent() {
        let mut r = request();
        r.value = f64::NAN;
        assert!(encode_message(&Message::Request(r)).is_err());
    }

    #[test]
    fn error_codes_round_trip() {
        let e = ProtocolError::BaselineMismatch("stale".into());
        let Message::Error { code, message } = Message::from(&e) else {
            unreachable!()
        };
        assert_eq!(ProtocolError::from_code(&code, message), e);
    }

    fn name() -> impl Strategy<Value = String> {
        "[a-zA-Z0-9_\"\\\\ é-]{0,12}"
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            -1e3f64..1e3,
            Just(0.0),
            Just(-0.0),
        ]
    }

    fn message() -> impl Strategy<Value = Message> {
        prop_oneof![
            (name(), name(), name(), name(), finite()).prop_map(|(a, b, c, d, v)| {
                Message::Request(ScoreAttributionRequest {
                    baseline_set: a,
                    explicand: b,
                    baseline: c,
                    score: d,
                    value: v,
                })
            }),
            (
                name(),
                name(),
                name(),
                name(),
                prop::collection::btree_map(name(), finite(), 0..6),
                finite()
            )
                .prop_map(|(a, b, c, d, attrs, delta)| {
                    Message::Response(ScoreAttributionResponse {
                        baseline_set: a,
                        explicand: b,
                        baseline: c,
                        score: d,
                        attrs: attrs.into_iter().collect(),
                        score_delta: delta,
                    })
                }),
            (name(), name()).prop_map(|(code, message)| Message::Error { code, message }),
        ]
    }

    proptest! {
        #[test]
        fn round_trip(msg in message()) {
            let frame = encode_message(&msg).unwrap();
            prop_assert!(!frame.contains('\n'));
            let back = decode_message(&frame).unwrap();
            // Bitwise float comparison: -0.0 must survive too.
            let bits = |m: &Message| format!("{:?}", encode_message(m).unwrap());
            prop_assert_eq!(bits(&back), bits(&msg));
            prop_assert_eq!(back, msg);
        }
    }
}
