//! The line-oriented test file format:
//!
//! ```text
//! input: 3 4
//! expect_out:
//! "7"
//! expect_status: ok
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError};
use crate::lang::Status;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectStatus {
    Ok,
    Abort,
}

impl ExpectStatus {
    pub fn status(self) -> Status {
        match self {
            ExpectStatus::Ok => Status::Ok,
            ExpectStatus::Abort => Status::ExplicitAbort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestCase {
    pub name: String,
    pub input: Vec<i64>,
    pub expect_out: Vec<String>,
    pub expect_status: ExpectStatus,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuite {
    pub cases: Vec<TestCase>,
}

pub fn parse_test(name: &str, text: &str) -> Result<TestCase, String> {
    let mut input = None;
    let mut expect_out = None::<Vec<String>>;
    let mut expect_status = None;
    let mut in_outputs = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let at = |m: String| format!("line {}: {m}", i + 1);
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("input:") {
            in_outputs = false;
            let values = rest
                .split_whitespace()
                .map(|t| {
                    t.parse::<i64>()
                        .map_err(|e| at(format!("bad integer `{t}`: {e}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            input = Some(values);
        } else if let Some(rest) = line.strip_prefix("expect_out:") {
            if !rest.trim().is_empty() {
                return Err(at("outputs go on the following lines".into()));
            }
            in_outputs = true;
            expect_out = Some(Vec::new());
        } else if let Some(rest) = line.strip_prefix("expect_status:") {
            in_outputs = false;
            expect_status = Some(match rest.trim() {
                "ok" => ExpectStatus::Ok,
                "abort" => ExpectStatus::Abort,
                other => return Err(at(format!("unknown status `{other}`"))),
            });
        } else if in_outputs && line.starts_with('"') {
            let s: String =
                serde_json::from_str(line).map_err(|e| at(format!("bad output line: {e}")))?;
            expect_out.get_or_insert_with(Vec::new).push(s);
        } else {
            return Err(at(format!("unexpected `{line}`")));
        }
    }
    Ok(TestCase {
        name: name.to_string(),
        input: input.ok_or("missing `input:`")?,
        expect_out: expect_out.unwrap_or_default(),
        expect_status: expect_status.ok_or("missing `expect_status:`")?,
    })
}

pub fn render_test(case: &TestCase) -> String {
    let mut out = String::from("input:");
    for v in &case.input {
        out.push(' ');
        out.push_str(&v.to_string());
    }
    out.push_str("\nexpect_out:\n");
    for line in &case.expect_out {
        out.push_str(&serde_json::to_string(line).expect("string serializes"));
        out.push('\n');
    }
    out.push_str(match case.expect_status {
        ExpectStatus::Ok => "expect_status: ok\n",
        ExpectStatus::Abort => "expect_status: abort\n",
    });
    out
}

impl TestSuite {
    /// Loads every `*.test` file in `dir`, sorted by name.
    pub fn load(dir: &Path) -> Result<TestSuite, HarnessError> {
        let mut entries: Vec<_> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "test"))
            .collect();
        entries.sort();
        let mut cases = Vec::new();
        for path in entries {
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let case = parse_test(&name, &text).map_err(|message| HarnessError::TestFormat {
                file: path.display().to_string(),
                message,
            })?;
            cases.push(case);
        }
        Ok(TestSuite { cases })
    }

    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        for case in &self.cases {
            let path = dir.join(format!("{}.test", case.name));
            fs::write(&path, render_test(case)).map_err(io_err(&path))?;
        }
        Ok(())
    }

    pub fn inputs(&self) -> Vec<Vec<i64>> {
        self.cases.iter().map(|c| c.input.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let case = TestCase {
            name: "t".into(),
            input: vec![3, -4],
            expect_out: vec!["7".into(), "a \"q\"".into()],
            expect_status: ExpectStatus::Abort,
        };
        let text = render_test(&case);
        assert_eq!(parse_test("t", &text).unwrap(), case);
    }

    #[test]
    fn rejects_unknown_status() {
        assert!(parse_test("t", "input:\nexpect_status: crash\n").is_err());
    }
}
