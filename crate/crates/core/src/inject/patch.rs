//! Line-based patches and their `-U0` unified diff form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatchError {
    #[error("{file}: edits overlap near line {line}")]
    Overlap { file: String, line: u32 },
    #[error("{file}:{line}: text does not match the patch")]
    Mismatch { file: String, line: u32 },
    #[error("unknown file `{0}`")]
    UnknownFile(String),
    #[error("malformed diff at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// Replace whole lines `start_line ..= start_line + n - 1` of `file`, where
/// `n` is the number of lines in `original`. Texts keep their line
/// terminators; only a file's last line may lack one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub file: String,
    pub start_line: u32,
    pub original: String,
    pub replacement: String,
}

impl Edit {
    pub fn original_lines(&self) -> u32 {
        line_count(&self.original)
    }

    pub fn replacement_lines(&self) -> u32 {
        line_count(&self.replacement)
    }

    /// Last original line (equal to `start_line - 1` for pure insertions).
    pub fn end_line(&self) -> u32 {
        self.start_line + self.original_lines() - 1
    }
}

fn line_count(s: &str) -> u32 {
    split_lines(s).len() as u32
}

/// Splits text into lines, each keeping its `\n`.
pub fn split_lines(s: &str) -> Vec<&str> {
    s.split_inclusive('\n').collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub edits: Vec<Edit>,
    pub diff: String,
}

impl Patch {
    /// Sorts edits by (file order of first appearance, line), rejects overlaps
    /// and renders the diff.
    pub fn new(mut edits: Vec<Edit>, file_order: &[String]) -> Result<Patch, PatchError> {
        let rank = |f: &str| file_order.iter().position(|p| p == f).unwrap_or(usize::MAX);
        edits.sort_by(|a, b| {
            (rank(&a.file), &a.file, a.start_line).cmp(&(rank(&b.file), &b.file, b.start_line))
        });
        for w in edits.windows(2) {
            if w[0].file == w[1].file && w[1].start_line <= w[0].end_line().max(w[0].start_line) {
                return Err(PatchError::Overlap {
                    file: w[1].file.clone(),
                    line: w[1].start_line,
                });
            }
        }
        let diff = render_diff(&edits);
        Ok(Patch { edits, diff })
    }

    pub fn files(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.edits {
            if !out.contains(&e.file) {
                out.push(e.file.clone());
            }
        }
        out
    }

    /// Lines touched: per edit, the larger of removed and added line counts.
    pub fn changed_lines(&self) -> usize {
        self.edits
            .iter()
            .map(|e| e.original_lines().max(e.replacement_lines()) as usize)
            .sum()
    }

    /// Applies the patch to `(path, content)` pairs, returning the changed
    /// files only.
    pub fn apply(&self, files: &[(String, String)]) -> Result<Vec<(String, String)>, PatchError> {
        self.transform(files, false)
    }

    /// Inverse of [`Patch::apply`] on patched contents.
    pub fn revert(&self, files: &[(String, String)]) -> Result<Vec<(String, String)>, PatchError> {
        self.transform(files, true)
    }

    fn transform(
        &self,
        files: &[(String, String)],
        reverse: bool,
    ) -> Result<Vec<(String, String)>, PatchError> {
        let mut out = Vec::new();
        for file in self.files() {
            let content = &files
                .iter()
                .find(|(p, _)| *p == file)
                .ok_or_else(|| PatchError::UnknownFile(file.clone()))?
                .1;
            let lines = split_lines(content);
            let mut result = String::with_capacity(content.len());
            let mut cursor = 0usize;
            let mut offset: i64 = 0;
            for e in self.edits.iter().filter(|e| e.file == file) {
                let (from, to) = if reverse {
                    (&e.replacement, &e.original)
                } else {
                    (&e.original, &e.replacement)
                };
                let start = if reverse {
                    (e.start_line as i64 + offset) as usize
                } else {
                    e.start_line as usize
                };
                offset += e.replacement_lines() as i64 - e.original_lines() as i64;
                let n = line_count(from) as usize;
                let first = start - 1;
                if first < cursor || first + n > lines.len() {
                    return Err(PatchError::Mismatch {
                        file: file.clone(),
                        line: start as u32,
                    });
                }
                let current: String = lines[first..first + n].concat();
                if current != *from {
                    return Err(PatchError::Mismatch {
                        file: file.clone(),
                        line: start as u32,
                    });
                }
                result.push_str(&lines[cursor..first].concat());
                result.push_str(to);
                cursor = first + n;
            }
            result.push_str(&lines[cursor..].concat());
            out.push((file, result));
        }
        Ok(out)
    }

    /// Position of an original line after the patch is applied. Lines inside
    /// an edit keep the edit's start.
    pub fn map_line(&self, file: &str, line: u32) -> u32 {
        let mut shift: i64 = 0;
        for e in self.edits.iter().filter(|e| e.file == file) {
            if e.end_line() < line {
                shift += e.replacement_lines() as i64 - e.original_lines() as i64;
            } else if e.start_line <= line {
                return (e.start_line as i64 + shift) as u32;
            }
        }
        (line as i64 + shift) as u32
    }

    pub fn from_diff(diff: &str) -> Result<Patch, PatchError> {
        let edits = parse_diff(diff)?;
        let order: Vec<String> = {
            let mut v: Vec<String> = Vec::new();
            for e in &edits {
                if !v.contains(&e.file) {
                    v.push(e.file.clone());
                }
            }
            v
        };
        let patch = Patch::new(edits, &order)?;
        if patch.diff != diff {
            return Err(PatchError::Malformed {
                line: 0,
                message: "diff is not in canonical form".into(),
            });
        }
        Ok(patch)
    }
}

fn push_lines(out: &mut String, prefix: char, text: &str) {
    for line in split_lines(text) {
        out.push(prefix);
        match line.strip_suffix('\n') {
            Some(l) => {
                out.push_str(l);
                out.push('\n');
            }
            None => {
                out.push_str(line);
                out.push_str("\n\\ No newline at end of file\n");
            }
        }
    }
}

fn range(start: i64, count: u32) -> String {
    match count {
        1 => format!("{start}"),
        0 => format!("{},0", start - 1),
        n => format!("{start},{n}"),
    }
}

fn render_diff(edits: &[Edit]) -> String {
    let mut by_file: Vec<(&str, Vec<&Edit>)> = Vec::new();
    for e in edits {
        match by_file.iter_mut().find(|(f, _)| *f == e.file) {
            Some((_, v)) => v.push(e),
            None => by_file.push((&e.file, vec![e])),
        }
    }
    let mut out = String::new();
    for (file, edits) in by_file {
        out.push_str(&format!("--- a/{file}\n+++ b/{file}\n"));
        let mut offset: i64 = 0;
        for e in edits {
            let old = e.original_lines();
            let new = e.replacement_lines();
            let old_start = e.start_line as i64;
            let new_start = old_start + offset;
            out.push_str(&format!(
                "@@ -{} +{} @@\n",
                range(old_start, old),
                range(new_start, new)
            ));
            push_lines(&mut out, '-', &e.original);
            push_lines(&mut out, '+', &e.replacement);
            offset += new as i64 - old as i64;
        }
    }
    out
}

fn parse_range(s: &str) -> Option<(u32, u32)> {
    let (start, count) = match s.split_once(',') {
        Some((a, b)) => (a.parse().ok()?, b.parse().ok()?),
        None => (s.parse().ok()?, 1),
    };
    Some((if count == 0 { start + 1 } else { start }, count))
}

fn parse_diff(diff: &str) -> Result<Vec<Edit>, PatchError> {
    let bad = |line: usize, message: &str| PatchError::Malformed {
        line: line + 1,
        message: message.to_string(),
    };
    let lines: Vec<&str> = diff.split_inclusive('\n').collect();
    let mut edits = Vec::new();
    let mut file: Option<String> = None;
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i]
            .strip_suffix('\n')
            .ok_or_else(|| bad(i, "missing newline"))?;
        if let Some(path) = line.strip_prefix("--- a/") {
            let next = lines.get(i + 1).and_then(|l| l.strip_suffix('\n'));
            if next != Some(&format!("+++ b/{path}")) {
                return Err(bad(i + 1, "expected `+++ b/` header"));
            }
            file = Some(path.to_string());
            i += 2;
            continue;
        }
        let header = line
            .strip_prefix("@@ -")
            .and_then(|l| l.strip_suffix(" @@"))
            .ok_or_else(|| bad(i, "expected hunk header"))?;
        let (old, _new) = header
            .split_once(" +")
            .ok_or_else(|| bad(i, "bad hunk header"))?;
        let (start, old_count) = parse_range(old).ok_or_else(|| bad(i, "bad hunk range"))?;
        let file = file
            .clone()
            .ok_or_else(|| bad(i, "hunk before file header"))?;
        i += 1;
        let mut original = String::new();
        let mut replacement = String::new();
        let mut removed = 0;
        while i < lines.len() {
            let l = lines[i];
            let target = if l.starts_with('-') && !l.starts_with("--- a/") {
                removed += 1;
                &mut original
            } else if l.starts_with('+') {
                &mut replacement
            } else {
                break;
            };
            target.push_str(&l[1..]);
            if lines.get(i + 1).is_some_and(|n| n.starts_with('\\')) {
                if target.ends_with('\n') {
                    target.pop();
                }
                i += 1;
            }
            i += 1;
        }
        if removed != old_count {
            return Err(bad(i, "hunk line count mismatch"));
        }
        edits.push(Edit {
            file,
            start_line: start,
            original,
            replacement,
        });
    }
    Ok(edits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn files() -> Vec<(String, String)> {
        vec![
            ("a.mc".into(), "l1\nl2\nl3\nl4\n".into()),
            ("b.mc".into(), "x\ny".into()),
        ]
    }

    fn sample() -> Patch {
        Patch::new(
            vec![
                Edit {
                    file: "a.mc".into(),
                    start_line: 2,
                    original: "l2\nl3\n".into(),
                    replacement: String::new(),
                },
                Edit {
                    file: "b.mc".into(),
                    start_line: 2,
                    original: "y".into(),
                    replacement: "z".into(),
                },
                Edit {
                    file: "a.mc".into(),
                    start_line: 4,
                    original: "l4\n".into(),
                    replacement: "m4\n".into(),
                },
            ],
            &["a.mc".into(), "b.mc".into()],
        )
        .unwrap()
    }

    #[test]
    fn diff_text() {
        assert_eq!(
            sample().diff,
            "--- a/a.mc\n+++ b/a.mc\n@@ -2,2 +1,0 @@\n-l2\n-l3\n@@ -4 +2 @@\n-l4\n+m4\n--- a/b.mc\n+++ b/b.mc\n@@ -2 +2 @@\n-y\n\\ No newline at end of file\n+z\n\\ No newline at end of file\n"
        );
    }

    #[test]
    fn apply_revert_and_parse() {
        let p = sample();
        let patched = p.apply(&files()).unwrap();
        assert_eq!(patched[0].1, "l1\nm4\n");
        assert_eq!(patched[1].1, "x\nz");
        let back = p.revert(&patched).unwrap();
        assert_eq!(back, files());
        assert_eq!(Patch::from_diff(&p.diff).unwrap(), p);
        assert_eq!(p.map_line("a.mc", 4), 2);
        assert_eq!(p.map_line("a.mc", 1), 1);
        assert_eq!(p.changed_lines(), 4);
    }

    #[test]
    fn mismatch_detected() {
        let p = sample();
        let mut f = files();
        f[0].1 = "l1\nXX\nl3\nl4\n".into();
        assert!(matches!(p.apply(&f), Err(PatchError::Mismatch { .. })));
    }

    #[test]
    fn overlap_rejected() {
        let e = |s| Edit {
            file: "a.mc".into(),
            start_line: s,
            original: "l\nl\n".into(),
            replacement: String::new(),
        };
        assert!(Patch::new(vec![e(1), e(2)], &[]).is_err());
    }
}
