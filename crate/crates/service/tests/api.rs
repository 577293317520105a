use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use histag::corpus::{parse_tsv, write_tsv, AnnotatedToken, Document, MorphCategory, ReferenceSet, Sentence};
use histag::synthetic::RegularLanguage;
use histag::tagger::{train_with_observer, ModelSet, TaskId, TrainConfig};
use histag_service::{router, AppState, ServiceConfig, Session};
use serde_json::{json, Value};
use tower::ServiceExt;

/// 40 sentences; `cheual` (34 times) and `cheval` (6 times) as nouns.
fn cheval_doc() -> Document {
    let sentences = (0..40)
        .map(|i| {
            let form = if i < 34 { "cheual" } else { "cheval" };
            Sentence::new(vec![
                AnnotatedToken::new("li", "le", "DETdef", "NOMB.=s|GENRE=m|CAS=n"),
                AnnotatedToken::new(form, form, "NOMcom", "NOMB.=s|GENRE=m|CAS=n"),
                AnnotatedToken::new("que", if i % 2 == 0 { "que4" } else { "que2" }, if i % 2 == 0 { "CONsub" } else { "PROrel" }, "MORPH=empty"),
                AnnotatedToken::new("vint", "venir", "VERcjg", "NOMB.=s|MODE=ind|TEMPS=psp|PERS=3"),
                AnnotatedToken::new(".", ".", "PONfrt", "MORPH=empty"),
            ])
        })
        .collect();
    Document::new("chevaux", sentences)
}

fn references() -> ReferenceSet {
    let set = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<BTreeSet<_>>();
    let mut morph = BTreeMap::new();
    for cat in MorphCategory::ALL {
        morph.insert(cat, set(&["s", "m", "n", "ind", "psp", "3"]));
    }
    ReferenceSet::new(
        set(&["le", "cheval", "cheual", "que2", "que4", "venir", "."]),
        set(&["DETdef", "NOMcom", "CONsub", "PROrel", "VERcjg", "PONfrt"]),
        morph,
    )
    .unwrap()
}

fn write_corpus(dir: &Path) -> Vec<u8> {
    let bytes = write_tsv(&cheval_doc());
    std::fs::write(dir.join("chevaux.tsv"), &bytes).unwrap();
    bytes
}

fn app_in(dir: &Path, refs: bool) -> Router {
    let state = ServiceConfig {
        corpus_dir: Some(dir.to_path_buf()),
        model_dir: None,
        references: refs.then(references),
    }
    .load()
    .unwrap();
    router(state)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(v) => builder
            .header("content-type", "application/json")
            .body(Body::from(v.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn call_json(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

#[tokio::test]
async fn lists_and_pages_tokens() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let app = app_in(dir.path(), false);

    let (s, v) = call_json(&app, "GET", "/corpora", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!([{ "id": "chevaux", "sentences": 40, "tokens": 200, "edits": 0 }]));

    let (s, v) = call_json(&app, "GET", "/corpus/chevaux/tokens", None).await;
    assert_eq!(s, StatusCode::OK);
    let idx: Vec<u64> = v["tokens"].as_array().unwrap().iter().map(|t| t["index"].as_u64().unwrap()).collect();
    assert_eq!(idx, (0..50).collect::<Vec<_>>());
    assert_eq!(v["total"], 200);

    let (_, v) = call_json(&app, "GET", "/corpus/chevaux/tokens?offset=195&limit=10", None).await;
    assert_eq!(v["tokens"].as_array().unwrap().len(), 5);
    assert_eq!(v["tokens"][0]["sentence"], 39);
    let (_, v) = call_json(&app, "GET", "/corpus/chevaux/tokens?offset=500", None).await;
    assert!(v["tokens"].as_array().unwrap().is_empty());

    let a = call(&app, "GET", "/corpus/chevaux/tokens?offset=7&limit=13", None).await;
    let b = call(&app, "GET", "/corpus/chevaux/tokens?offset=7&limit=13", None).await;
    assert_eq!(a, b);

    assert_eq!(call(&app, "GET", "/corpus/nope/tokens", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(call(&app, "GET", "/corpus/chevaux/tokens?limit=5000", None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concordance_search() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    let app = app_in(dir.path(), false);

    let (s, v) = call_json(&app, "POST", "/corpus/chevaux/search", Some(json!({ "lemma": "que4", "limit": 1000 }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 20);
    assert!(v["matches"].as_array().unwrap().iter().all(|m| m["lemma"] == "que4"));

    let (_, v) = call_json(&app, "POST", "/corpus/chevaux/search", Some(json!({ "form": "che*", "limit": 1000 }))).await;
    let forms: BTreeSet<&str> = v["matches"].as_array().unwrap().iter().map(|m| m["form"].as_str().unwrap()).collect();
    assert_eq!(forms, BTreeSet::from(["cheval", "cheual"]));
    assert_eq!(v["total"], 40);
    assert_eq!(v["matches"][0]["left"], json!(["li"]));
    assert_eq!(v["matches"][0]["right"], json!(["que", "vint", "."]));

    let (_, v) = call_json(&app, "POST", "/corpus/chevaux/search", Some(json!({ "form": "che*", "context": 1 }))).await;
    assert_eq!(v["matches"][0]["right"], json!(["que"]));
    assert_eq!(v["matches"].as_array().unwrap().len(), 40);

    let (s, v) = call_json(&app, "POST", "/corpus/chevaux/search", Some(json!({ "lemma": "roi" }))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["total"], 0);

    for bad in [json!({}), json!({ "form": "c*l" }), json!({ "form": "che*", "limit": 1001 })] {
        assert_eq!(call(&app, "POST", "/corpus/chevaux/search", Some(bad)).await.0, StatusCode::BAD_REQUEST);
    }
}

#[tokio::test]
async fn batch_edit_journal_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let original = write_corpus(dir.path());
    let app = app_in(dir.path(), false);

    let (s, body) = call(&app, "GET", "/corpus/chevaux/export", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, original);

    let edit = json!({ "query": { "form": "cheual" }, "column": "lemma", "value": "cheval", "expected_matches": 34 });
    let (s, v) = call_json(&app, "POST", "/corpus/chevaux/batch-edit", Some(edit)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v, json!({ "count": 34, "journal_length": 1 }));

    let none = json!({ "query": { "lemma": "cheual" }, "column": "lemma", "value": "cheval" });
    let (_, v) = call_json(&app, "POST", "/corpus/chevaux/batch-edit", Some(none)).await;
    assert_eq!(v, json!({ "count": 0, "journal_length": 1 }));

    let stale = json!({ "query": { "lemma": "cheval" }, "column": "pos", "value": "NOMpro", "expected_matches": 6 });
    assert_eq!(call(&app, "POST", "/corpus/chevaux/batch-edit", Some(stale)).await.0, StatusCode::CONFLICT);
    let bad = json!({ "query": { "lemma": "cheval" }, "column": "form", "value": "x" });
    assert_eq!(call(&app, "POST", "/corpus/chevaux/batch-edit", Some(bad)).await.0, StatusCode::BAD_REQUEST);
    let empty = json!({ "query": {}, "column": "lemma", "value": "x" });
    assert_eq!(call(&app, "POST", "/corpus/chevaux/batch-edit", Some(empty)).await.0, StatusCode::BAD_REQUEST);

    let (_, exported) = call(&app, "GET", "/corpus/chevaux/export", None).await;
    let doc = parse_tsv(&exported).unwrap();
    assert_eq!(doc.tokens().filter(|t| t.lemma == "cheval").count(), 40);
    assert_eq!(doc.tokens().filter(|t| t.lemma == "cheual").count(), 0);

    // a restarted service replays the journal
    let reopened = app_in(dir.path(), false);
    assert_eq!(call(&reopened, "GET", "/corpus/chevaux/export", None).await.1, exported);
    let (_, v) = call_json(&reopened, "GET", "/corpora", None).await;
    assert_eq!(v[0]["edits"], 1);
}

#[tokio::test]
async fn unallowed_tracks_edits() {
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path());
    assert_eq!(
        call(&app_in(dir.path(), false), "GET", "/corpus/chevaux/unallowed", None).await.0,
        StatusCode::SERVICE_UNAVAILABLE
    );
    let app = app_in(dir.path(), true);
    let count = |v: &Value| {
        ["unallowed_lemmas", "unallowed_pos", "unallowed_morph"]
            .iter()
            .map(|k| v[k].as_array().unwrap().len())
            .sum::<usize>()
    };
    let (s, v) = call_json(&app, "GET", "/corpus/chevaux/unallowed", None).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(count(&v), 0);

    let typo = json!({ "query": { "sentence": 3, "token": 1 }, "column": "lemma", "value": "chevl" });
    assert_eq!(call_json(&app, "POST", "/corpus/chevaux/batch-edit", Some(typo)).await.1["count"], 1);
    let (_, v) = call_json(&app, "GET", "/corpus/chevaux/unallowed", None).await;
    assert_eq!(count(&v), 1);
    assert_eq!(v["unallowed_lemmas"][0]["sentence"], 3);

    let fix = json!({ "query": { "lemma": "chevl" }, "column": "lemma", "value": "cheval" });
    call(&app, "POST", "/corpus/chevaux/batch-edit", Some(fix)).await;
    let (_, v) = call_json(&app, "GET", "/corpus/chevaux/unallowed", None).await;
    assert_eq!(count(&v), 0);
    assert_eq!(call(&app, "GET", "/corpus/nope/unallowed", None).await.0, StatusCode::NOT_FOUND);
}

fn models() -> ModelSet {
    let data = RegularLanguage::new(20, 1).sentences(40, 2);
    let mut set = ModelSet::new();
    for task in [TaskId::Lemma, TaskId::Pos] {
        let mut c = TrainConfig::new(task, 8, 1, 8);
        c.max_epochs = 2;
        set.insert(train_with_observer(&c, &data[..30], &data[30..], |_| {}).unwrap());
    }
    set
}

async fn post_text(app: &Router, uri: &str, body: &str) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method("POST").uri(uri).body(Body::from(body.to_string())).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, to_bytes(res.into_body(), usize::MAX).await.unwrap().to_vec())
}

#[tokio::test]
async fn tagging() {
    let empty = router(AppState::new(None, None, vec![]));
    assert_eq!(post_text(&empty, "/tag", "je\n").await.0, StatusCode::SERVICE_UNAVAILABLE);

    let models = models();
    let labels: BTreeSet<String> = models.models[&TaskId::Pos].labels().unwrap().iter().map(String::from).collect();
    let app = router(AppState::new(Some(models), None, vec![Session::in_memory("x", cheval_doc())]));

    let (s, body) = post_text(&app, "/tag", "je\nchante\n.\n").await;
    assert_eq!(s, StatusCode::OK);
    let doc = parse_tsv(&body).unwrap();
    assert_eq!(doc.token_count(), 3);
    assert!(doc.tokens().all(|t| labels.contains(&t.pos)));

    let (s, body) = post_text(&app, "/tag?format=json", "form\tlemma\npor\t_\nchanter\t_\n\ntu\t_\n").await;
    assert_eq!(s, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["sentences"].as_array().unwrap().len(), 2);
    assert_eq!(v["sentences"][0][1]["form"], "chanter");

    assert_eq!(post_text(&app, "/tag", "").await.0, StatusCode::BAD_REQUEST);
    assert_eq!(post_text(&app, "/tag", "\n\n# only a comment\n").await.0, StatusCode::BAD_REQUEST);
}
