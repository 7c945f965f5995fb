//! Word vectors from an external service over line-delimited JSON.
//!
//! One request per batch of words: `{"words": [...]}` followed by a
//! newline; the service answers with `{"vectors": [[...], ...]}` on one
//! line, one vector per requested word in the same order. Any pooling of
//! sub-word pieces into a word vector is the service's business, but it
//! must be fixed for the lifetime of the process.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{EmbeddingError, EmbeddingProvider};

#[derive(Serialize)]
struct Request<'a> {
    words: &'a [String],
}

#[derive(Deserialize)]
struct Response {
    vectors: Vec<Vec<f64>>,
}

struct Channel<R, W> {
    reader: R,
    writer: W,
}

/// Provider speaking the JSON-lines protocol over any reader/writer pair.
/// Answers are cached so repeated words never hit the service twice.
pub struct JsonLinesProvider<R, W> {
    name: String,
    dim: usize,
    channel: Mutex<Channel<R, W>>,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl<R: BufRead + Send, W: Write + Send> JsonLinesProvider<R, W> {
    pub fn new(name: impl Into<String>, dim: usize, reader: R, writer: W) -> Self {
        Self {
            name: name.into(),
            dim,
            channel: Mutex::new(Channel { reader, writer }),
            cache: Mutex::new(HashMap::new()),
        }
    }

    fn request(&self, words: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let io_err = |e: std::io::Error| EmbeddingError::Provider(e.to_string());
        let mut channel = self.channel.lock().expect("provider channel poisoned");
        let line = serde_json::to_string(&Request { words }).expect("request serializes");
        writeln!(channel.writer, "{line}").map_err(io_err)?;
        channel.writer.flush().map_err(io_err)?;
        let mut answer = String::new();
        if channel.reader.read_line(&mut answer).map_err(io_err)? == 0 {
            return Err(EmbeddingError::Provider("provider closed the stream".into()));
        }
        let response: Response = serde_json::from_str(answer.trim())
            .map_err(|e| EmbeddingError::Provider(format!("bad response: {e}")))?;
        if response.vectors.len() != words.len() {
            return Err(EmbeddingError::Provider(format!(
                "asked for {} vectors, got {}",
                words.len(),
                response.vectors.len()
            )));
        }
        for v in &response.vectors {
            if v.len() != self.dim {
                return Err(EmbeddingError::Dimension { expected: self.dim, got: v.len() });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EmbeddingError::Provider("non-finite vector entry".into()));
            }
        }
        Ok(response.vectors)
    }
}

impl<R: BufRead + Send, W: Write + Send> EmbeddingProvider for JsonLinesProvider<R, W> {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn vectors(&self, words: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        let missing: Vec<String> = {
            let cache = self.cache.lock().expect("provider cache poisoned");
            let mut seen = std::collections::HashSet::new();
            words
                .iter()
                .filter(|w| !cache.contains_key(*w) && seen.insert(w.as_str()))
                .cloned()
                .collect()
        };
        if !missing.is_empty() {
            let fetched = self.request(&missing)?;
            let mut cache = self.cache.lock().expect("provider cache poisoned");
            for (w, v) in missing.into_iter().zip(fetched) {
                cache.insert(w, v);
            }
        }
        let cache = self.cache.lock().expect("provider cache poisoned");
        Ok(words.iter().map(|w| cache[w].clone()).collect())
    }
}

/// A provider backed by a child process reading requests on stdin and
/// writing responses on stdout.
pub struct SubprocessProvider {
    inner: JsonLinesProvider<BufReader<ChildStdout>, ChildStdin>,
    child: Child,
}

impl SubprocessProvider {
    pub fn spawn(program: &str, args: &[String], dim: usize) -> Result<Self, EmbeddingError> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| EmbeddingError::Provider(format!("spawning {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Ok(Self {
            inner: JsonLinesProvider::new(program, dim, BufReader::new(stdout), stdin),
            child,
        })
    }
}

impl Drop for SubprocessProvider {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl EmbeddingProvider for SubprocessProvider {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn vectors(&self, words: &[String]) -> Result<Vec<Vec<f64>>, EmbeddingError> {
        self.inner.vectors(words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn request_and_cache() {
        let reply = b"{\"vectors\":[[1.0,0.0],[0.0,1.0]]}\n".to_vec();
        let p = JsonLinesProvider::new("fake", 2, Cursor::new(reply), Vec::new());
        let v = p.vectors(&words(&["a", "b", "a"])).unwrap();
        assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        // Served from cache; the reader is exhausted so a request would fail.
        assert_eq!(p.vectors(&words(&["b"])).unwrap(), vec![vec![0.0, 1.0]]);
        let sent = String::from_utf8(p.channel.lock().unwrap().writer.clone()).unwrap();
        assert_eq!(sent, "{\"words\":[\"a\",\"b\"]}\n");
        assert!(p.vectors(&words(&["c"])).is_err());
    }

    #[test]
    fn dimension_is_validated() {
        let reply = b"{\"vectors\":[[1.0,0.0,3.0]]}\n".to_vec();
        let p = JsonLinesProvider::new("fake", 2, Cursor::new(reply), Vec::new());
        assert_eq!(
            p.vectors(&words(&["a"])),
            Err(EmbeddingError::Dimension { expected: 2, got: 3 })
        );
    }

    #[test]
    fn subprocess_round_trip() {
        let script = "import sys, json\nfor line in sys.stdin:\n    ws = json.loads(line)['words']\n    print(json.dumps({'vectors': [[float(len(w)), 1.0] for w in ws]}), flush=True)\n";
        let Ok(p) = SubprocessProvider::spawn("python3", &["-c".into(), script.into()], 2) else {
            eprintln!("python3 unavailable, skipping");
            return;
        };
        let v = p.vectors(&words(&["abc", "de"])).unwrap();
        assert_eq!(v, vec![vec![3.0, 1.0], vec![2.0, 1.0]]);
    }
}
