//! TSV corpus files: one pair per line, single tab, whitespace tokenization.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ParallelCorpus, Split};
use crate::error::{Error, Result};

/// Whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

/// Load a UTF-8 TSV corpus. CRLF endings are normalized away.
pub fn load_tsv(path: impl AsRef<Path>, split: Split) -> Result<ParallelCorpus> {
    let raw = fs::read_to_string(path.as_ref())?;
    let mut pairs = Vec::new();
    for (idx, line) in raw.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split('\t');
        let (src, tgt) = match (fields.next(), fields.next(), fields.next()) {
            (Some(s), Some(t), None) => (s, t),
            (_, None, _) => {
                return Err(Error::ParseLine {
                    line: lineno,
                    msg: "expected a single tab separating source and target".into(),
                })
            }
            _ => {
                return Err(Error::ParseLine {
                    line: lineno,
                    msg: "more than one tab in line".into(),
                })
            }
        };
        let (src, tgt) = (tokenize(src), tokenize(tgt));
        if src.is_empty() || tgt.is_empty() {
            return Err(Error::ParseLine {
                line: lineno,
                msg: "empty source or target side".into(),
            });
        }
        pairs.push((src, tgt));
    }
    Ok(ParallelCorpus::new(pairs, split))
}

/// Write a corpus back out; `load_tsv(save_tsv(c)) == c`.
pub fn save_tsv(corpus: &ParallelCorpus, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path.as_ref())?;
    for (src, tgt) in &corpus.pairs {
        writeln!(f, "{}\t{}", src.join(" "), tgt.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_simple_pair() {
        let f = write_temp("a b\tc d\n");
        let c = load_tsv(f.path(), Split::Train).unwrap();
        assert_eq!(c.pairs, vec![(vec!["a".to_string(), "b".into()], vec!["c".to_string(), "d".into()])]);
    }

    #[test]
    fn missing_tab_reports_line_number() {
        let f = write_temp("a b\tc d\nno tab here\n");
        match load_tsv(f.path(), Split::Train) {
            Err(Error::ParseLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn crlf_equals_lf() {
        let lf = write_temp("a b\tc d\ne\tf\n");
        let crlf = write_temp("a b\tc d\r\ne\tf\r\n");
        assert_eq!(
            load_tsv(lf.path(), Split::Train).unwrap().pairs,
            load_tsv(crlf.path(), Split::Train).unwrap().pairs
        );
    }

    #[test]
    fn save_load_round_trip() {
        let f = write_temp("a b\tc d\ne f g\th\n");
        let c = load_tsv(f.path(), Split::Test).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        save_tsv(&c, out.path()).unwrap();
        let reloaded = load_tsv(out.path(), Split::Test).unwrap();
        assert_eq!(c.pairs, reloaded.pairs);
        // byte-exact round trip
        let bytes1 = std::fs::read(out.path()).unwrap();
        let out2 = tempfile::NamedTempFile::new().unwrap();
        save_tsv(&reloaded, out2.path()).unwrap();
        assert_eq!(bytes1, std::fs::read(out2.path()).unwrap());
    }

    #[test]
    fn tokenize_detokenize_identity_on_clean_text() {
        let text = "alpha beta gamma";
        assert_eq!(tokenize(text).join(" "), text);
    }
}
