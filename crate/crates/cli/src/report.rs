use serde_json::{Map, Value};

pub const SCHEMA: u64 = 1;

/// A command's output: echoed inputs, table rows and named extras. Every
/// numeric row and extra carries a "method" field.
#[derive(Debug, Default)]
pub struct Report {
    pub command: String,
    pub inputs: Map<String, Value>,
    pub rows: Vec<Map<String, Value>>,
    pub summary: Map<String, Value>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Report { command: command.to_string(), ..Default::default() }
    }

    pub fn input(&mut self, key: &str, v: impl Into<Value>) {
        self.inputs.insert(key.into(), v.into());
    }

    pub fn extra(&mut self, key: &str, v: Value) {
        self.summary.insert(key.into(), v);
    }

    pub fn to_json(&self) -> String {
        let mut top = Map::new();
        top.insert("schema".into(), SCHEMA.into());
        top.insert("command".into(), self.command.clone().into());
        top.insert("inputs".into(), Value::Object(self.inputs.clone()));
        top.insert("results".into(), Value::Array(self.rows.iter().cloned().map(Value::Object).collect()));
        top.insert("summary".into(), Value::Object(self.summary.clone()));
        let mut s = serde_json::to_string_pretty(&Value::Object(top)).expect("reports serialise");
        s.push('\n');
        s
    }

    /// Header row from the union of row keys in first-seen order; absent
    /// cells are empty.
    pub fn to_csv(&self) -> String {
        let mut header: Vec<String> = Vec::new();
        for row in &self.rows {
            for k in row.keys() {
                if !header.contains(k) {
                    header.push(k.clone());
                }
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = header.iter().map(|k| row.get(k).map(csv_cell).unwrap_or_default()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn csv_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) if s.contains([',', '"', '\n']) => format!("\"{}\"", s.replace('"', "\"\"")),
        Value::String(s) => s.clone(),
        Value::Array(a) => {
            let inner: Vec<String> = a.iter().map(csv_cell).collect();
            format!("\"{}\"", inner.join(";"))
        }
        other => other.to_string(),
    }
}

/// Builds a row from key/value pairs.
#[macro_export]
macro_rules! row {
    ($($k:expr => $v:expr),* $(,)?) => {{
        let mut m = serde_json::Map::new();
        $( m.insert($k.to_string(), serde_json::json!($v)); )*
        m
    }};
}
