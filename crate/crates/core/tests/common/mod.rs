//! Synthetic corpus, revision chains, questions and deterministic mock
//! endpoints shared by the integration tests.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use drift_eval::harness::{chat_response, ChatModel, DecodingParams};
use drift_eval::simdrift::Embedder;
use drift_eval::{DatasetId, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub const MARKER: &str = "DRIFTMARK";
pub const READ_WINDOW: usize = 200;
pub const ARTICLES: usize = 20;
pub const QUESTIONS: usize = 50;
/// Question whose edit removes the answer span.
pub const DESTROYED: usize = 48;

/// Cosine the mock embedder assigns to a passage carrying `d` markers,
/// measured against marker-free text.
pub fn similarity_for(d: usize) -> f64 {
    0.95 - 0.1 * d as f64
}

pub fn filler(i: usize) -> String {
    format!("{MARKER} note {i} adds words.")
}

/// Maps marker-free text to (1, 0) and text with `d` markers to the unit
/// vector at angle arccos(similarity_for(d)).
pub struct MarkerEmbedder;

impl Embedder for MarkerEmbedder {
    fn model_id(&self) -> &str {
        "marker-2d"
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts
            .iter()
            .map(|t| {
                let d = t.matches(MARKER).count();
                if d == 0 {
                    vec![1.0, 0.0]
                } else {
                    let c = similarity_for(d);
                    vec![c as f32, (1.0 - c * c).sqrt() as f32]
                }
            })
            .collect())
    }
}

/// Answers from the passage only when the answer lies within its first
/// [`READ_WINDOW`] characters; without a passage, answers only the
/// questions it "knows".
pub struct MockReader {
    pub answers: BTreeMap<String, String>,
    pub known: BTreeSet<String>,
}

impl MockReader {
    pub fn reply(&self, prompt: &str) -> String {
        let question = prompt
            .rsplit("Question: ")
            .next()
            .and_then(|q| q.lines().next())
            .unwrap_or("")
            .to_string();
        let Some(answer) = self.answers.get(&question) else {
            return "unanswerable".into();
        };
        let passage = prompt
            .split_once("\"\"\"")
            .and_then(|(_, rest)| rest.split_once("\"\"\""))
            .map(|(p, _)| p);
        let correct = match passage {
            Some(p) => p.chars().take(READ_WINDOW).collect::<String>().contains(answer.as_str()),
            None => self.known.contains(&question),
        };
        if correct {
            answer.clone()
        } else {
            "unanswerable".into()
        }
    }
}

impl ChatModel for MockReader {
    fn complete(&self, prompt: &str, _: &DecodingParams) -> Result<Value> {
        Ok(chat_response(&self.reply(prompt)))
    }
}

#[derive(Debug, Clone)]
pub struct Question {
    pub index: usize,
    pub instance_id: String,
    pub dataset: DatasetId,
    pub article: usize,
    pub question: String,
    pub answer: String,
    pub original: String,
    pub edited: String,
    /// Character offset of the answer in the original paragraph.
    pub offset: usize,
    /// Number of filler sentences prepended by the edit.
    pub edits: usize,
}

#[derive(Debug, Clone)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<String>,
    pub edited: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub articles: Vec<Article>,
    pub questions: Vec<Question>,
    /// Questions whose edited paragraph is planted verbatim in the corpus.
    pub planted: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct WorldFiles {
    pub datasets: Vec<(DatasetId, PathBuf)>,
    pub history: PathBuf,
    pub corpus: PathBuf,
}

fn random_words(rng: &mut ChaCha8Rng, min_chars: usize) -> String {
    let mut out = String::new();
    while out.len() < min_chars {
        if !out.is_empty() {
            out.push(' ');
        }
        let len = rng.gen_range(3..=8);
        out.extend((0..len).map(|_| char::from(b'a' + rng.gen_range(0..26u8))));
    }
    out
}

impl World {
    pub fn generate(seed: u64) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut articles: Vec<Article> = (0..ARTICLES)
            .map(|a| Article {
                title: format!("Article {a:02}"),
                paragraphs: Vec::new(),
                edited: Vec::new(),
            })
            .collect();
        let mut questions = Vec::new();
        for q in 0..QUESTIONS {
            let article = q % ARTICLES;
            let answer = format!("Kol{q:02}Vex");
            let prefix_len = rng.gen_range(0..150);
            let prefix = random_words(&mut rng, prefix_len);
            let prefix = if prefix_len == 0 { String::new() } else { format!("{prefix} ") };
            let suffix = random_words(&mut rng, 300 - prefix.len().min(250));
            let original = format!("{prefix}{answer} {suffix}.");
            let edits = rng.gen_range(1..=6);
            let fillers: Vec<String> = (0..edits).map(filler).collect();
            let body = if q == DESTROYED {
                original.replace(&answer, "someone")
            } else {
                original.clone()
            };
            let edited = format!("{} {body}", fillers.join(" "));
            let a = &mut articles[article];
            a.paragraphs.push(original.clone());
            a.edited.push(edited.clone());
            questions.push(Question {
                index: q,
                instance_id: format!("q{q:02}"),
                dataset: if q < 30 { DatasetId::Squad11 } else { DatasetId::AdvQaDRoberta },
                article,
                question: format!("What is recorded as item {q} in {}?", a.title),
                answer,
                offset: prefix.len(),
                original,
                edited,
                edits,
            });
        }
        for a in &mut articles {
            if a.paragraphs.len() < 3 {
                let extra = random_words(&mut rng, 200) + ".";
                a.paragraphs.push(extra.clone());
                a.edited.push(extra);
            }
        }
        World {
            articles,
            questions,
            planted: vec![1, 2, 31],
        }
    }

    pub fn reader(&self, known: impl Fn(usize) -> bool) -> MockReader {
        MockReader {
            answers: self
                .questions
                .iter()
                .map(|q| (q.question.clone(), q.answer.clone()))
                .collect(),
            known: self
                .questions
                .iter()
                .filter(|q| known(q.index))
                .map(|q| q.question.clone())
                .collect(),
        }
    }

    pub fn write(&self, dir: &Path) -> WorldFiles {
        std::fs::create_dir_all(dir).unwrap();
        let mut datasets = Vec::new();
        for (dataset, name) in [(DatasetId::Squad11, "squad.jsonl"), (DatasetId::AdvQaDRoberta, "advqa.jsonl")] {
            let lines: Vec<String> = self
                .questions
                .iter()
                .filter(|q| q.dataset == dataset)
                .map(|q| {
                    let title = &self.articles[q.article].title;
                    json!({
                        "instance_id": q.instance_id,
                        "dataset_id": dataset.as_str(),
                        "question": q.question,
                        "titles": [title],
                        "paragraphs": { title.as_str(): [q.original] },
                        "gold_titles": [],
                        "gold_answers": [q.answer],
                    })
                    .to_string()
                })
                .collect();
            let path = dir.join(name);
            std::fs::write(&path, lines.join("\n") + "\n").unwrap();
            datasets.push((dataset, path));
        }

        let mut history = Vec::new();
        for (a, article) in self.articles.iter().enumerate() {
            let original = article.paragraphs.join("\n\n");
            let edited = article.edited.join("\n\n");
            let mut texts = vec![original.clone(), edited.clone()];
            if a % 5 == 0 {
                // Revert and reapply: a second occurrence with the same edit.
                texts.extend([original, edited]);
            }
            for (r, text) in texts.iter().enumerate() {
                history.push(
                    json!({
                        "title": article.title,
                        "rev_id": 1000 * (a + 1) + r,
                        "timestamp": format!("2021-03-{:02}T12:00:00Z", r + 1),
                        "text": text,
                    })
                    .to_string(),
                );
            }
        }
        let history_path = dir.join("history.jsonl");
        std::fs::write(&history_path, history.join("\n") + "\n").unwrap();

        let mut corpus: Vec<String> = self
            .articles
            .iter()
            .enumerate()
            .map(|(a, article)| {
                json!({ "doc_id": format!("wiki-{a:02}"), "title": article.title, "text": article.paragraphs.join("\n\n") })
                    .to_string()
            })
            .collect();
        for &q in &self.planted {
            corpus.push(
                json!({ "doc_id": format!("mirror-{q:02}"), "title": "Mirror Site", "text": self.questions[q].edited })
                    .to_string(),
            );
        }
        let corpus_path = dir.join("corpus.jsonl");
        std::fs::write(&corpus_path, corpus.join("\n") + "\n").unwrap();

        WorldFiles {
            datasets,
            history: history_path,
            corpus: corpus_path,
        }
    }

    /// Writes a run configuration for these files; `llms` are
    /// `(llm_id, base_url)` pairs. Without `embedding_url` the config names
    /// the offline hashing embedder, which tests replace with a mock.
    pub fn write_config(
        &self,
        files: &WorldFiles,
        dir: &Path,
        out: &Path,
        llms: &[(&str, &str)],
        embedding_url: Option<&str>,
        extra: &str,
    ) -> PathBuf {
        let mut toml = format!("output_dir = {:?}\nfailure_budget = 0\n{extra}\n", out.display().to_string());
        for (id, path) in &files.datasets {
            toml.push_str(&format!("[[datasets]]\nid = \"{id}\"\npath = {:?}\n\n", path.display().to_string()));
        }
        toml.push_str(&format!("[[histories]]\npath = {:?}\n\n", files.history.display().to_string()));
        toml.push_str(&format!(
            "[[corpora]]\ntag = \"wiki-snapshot\"\npath = {:?}\n\n",
            files.corpus.display().to_string()
        ));
        for (id, url) in llms {
            toml.push_str(&format!("[[llms]]\nllm_id = \"{id}\"\nbase_url = \"{url}\"\nmodel = \"{id}\"\n\n"));
        }
        match embedding_url {
            Some(url) => toml.push_str(&format!(
                "[embedding]\nkind = \"http\"\nbase_url = \"{url}\"\nmodel_id = \"marker-2d\"\n"
            )),
            None => toml.push_str("[embedding]\nkind = \"hashing\"\nmodel_id = \"marker-2d\"\n"),
        }
        let path = dir.join("run.toml");
        std::fs::write(&path, toml).unwrap();
        path
    }
}

/// Every file under `dir` with its bytes, keyed by relative path.
pub fn file_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn mock_llms(world: &World) -> BTreeMap<String, Arc<dyn ChatModel>> {
    BTreeMap::from([
        ("reader-a".to_string(), Arc::new(world.reader(|q| q % 7 == 0)) as Arc<dyn ChatModel>),
        ("reader-b".to_string(), Arc::new(world.reader(|q| q % 5 == 0)) as Arc<dyn ChatModel>),
    ])
}

/// Local OpenAI-compatible server backed by the mocks:
/// `/v1/embeddings`, `/<llm_id>/v1/chat/completions` for the readers in
/// [`mock_llms`], and `/broken/v1/...` which always answers 400.
pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    pub fn start(world: &World) -> MockServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let llms = Arc::new(mock_llms(world));
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let llms = llms.clone();
                let counter = counter.clone();
                std::thread::spawn(move || {
                    let _ = handle(stream, &llms, &counter);
                });
            }
        });
        MockServer { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn handle(
    mut stream: std::net::TcpStream,
    llms: &BTreeMap<String, Arc<dyn ChatModel>>,
    hits: &AtomicUsize,
) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut len = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 || line == "\r\n" {
            break;
        }
        if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
            len = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body)?;
    hits.fetch_add(1, Ordering::SeqCst);
    let request: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);

    let (status, payload) = if path == "/v1/embeddings" {
        let texts: Vec<String> = request["input"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str().map(String::from)).collect())
            .unwrap_or_default();
        let vectors = MarkerEmbedder.embed_batch(&texts).unwrap();
        let data: Vec<Value> = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| json!({ "index": i, "embedding": v }))
            .collect();
        ("200 OK", json!({ "data": data }).to_string())
    } else if let Some(llm) = path.strip_suffix("/v1/chat/completions").map(|p| p.trim_start_matches('/')) {
        match llms.get(llm) {
            Some(model) => {
                let prompt = request["messages"][0]["content"].as_str().unwrap_or("");
                let params = DecodingParams { temperature: 0.0, top_p: 1.0, max_tokens: 256 };
                ("200 OK", model.complete(prompt, &params).unwrap().to_string())
            }
            None => ("400 Bad Request", json!({ "error": "unknown model" }).to_string()),
        }
    } else {
        ("404 Not Found", "{}".to_string())
    };
    write!(
        stream,
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    )?;
    stream.flush()
}
