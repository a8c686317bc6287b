//! A raw HTTP client for the REST surface, independent of the crate's
//! in-process publish helpers.

use std::collections::BTreeMap;
use std::sync::Arc;

use modelport::server::BackgroundServer;
use modelport::service::ServiceConfig;
use serde_json::{json, Value};

use super::{svc_with, Svc};

pub struct Rest {
    pub base: String,
    http: reqwest::Client,
}

pub struct Served {
    pub svc: Svc,
    pub server: BackgroundServer,
    pub rest: Rest,
}

pub fn served() -> Served {
    served_with(|_| {})
}

pub fn served_with(tweak: impl FnOnce(&mut ServiceConfig)) -> Served {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let svc = svc_with(|c| {
        c.public_url = base.clone();
        tweak(c);
    });
    let server = BackgroundServer::start_on(listener, Arc::clone(&svc.service)).unwrap();
    Served {
        svc,
        server,
        rest: Rest::new(&base),
    }
}

async fn reply(resp: reqwest::Response) -> (u16, Value) {
    let status = resp.status().as_u16();
    let bytes = resp.bytes().await.unwrap();
    let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, body)
}

impl Rest {
    pub fn new(base: &str) -> Rest {
        Rest {
            base: base.trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        reply(self.http.get(format!("{}{path}", self.base)).send().await.unwrap()).await
    }

    pub async fn get_bytes(&self, path: &str) -> (u16, Vec<u8>) {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        (resp.status().as_u16(), resp.bytes().await.unwrap().to_vec())
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        reply(self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap()).await
    }

    /// PUTs raw bytes to an absolute URL.
    pub async fn put(&self, url: &str, bytes: Vec<u8>) -> (u16, Value) {
        reply(self.http.put(url).body(bytes).send().await.unwrap()).await
    }

    pub async fn begin(&self, key: &str, slug: &str, label: &str) -> (u16, Value) {
        self.post("/api/v1/publish/begin", json!({"api_key": key, "model_slug": slug, "label": label}))
            .await
    }

    pub async fn manifest(&self, token: &str, metadata: &Value, files: &BTreeMap<String, Vec<u8>>) -> (u16, Value) {
        let files: Vec<Value> = files
            .iter()
            .map(|(path, bytes)| json!({"path": path, "digest": sha256(bytes), "size": bytes.len()}))
            .collect();
        self.post(
            &format!("/api/v1/publish/{token}/manifest"),
            json!({"metadata": metadata, "files": files}),
        )
        .await
    }

    pub async fn finalize(&self, token: &str) -> (u16, Value) {
        self.post(&format!("/api/v1/publish/{token}/finalize"), json!({})).await
    }

    /// The whole handshake; panics on any unexpected status.
    pub async fn publish(&self, key: &str, slug: &str, metadata: &Value, files: &BTreeMap<String, Vec<u8>>) -> Value {
        let (status, begin) = self.begin(key, slug, "rest").await;
        assert_eq!(status, 201, "{begin}");
        let token = begin["token"].as_str().unwrap().to_string();
        let (status, manifest) = self.manifest(&token, metadata, files).await;
        assert_eq!(status, 200, "{manifest}");
        for ticket in manifest["uploads"].as_array().unwrap() {
            if let Some(url) = ticket["url"].as_str() {
                let (status, body) = self.put(url, files[ticket["path"].as_str().unwrap()].clone()).await;
                assert_eq!(status, 201, "{body}");
            }
        }
        let (status, record) = self.finalize(&token).await;
        assert_eq!(status, 200, "{record}");
        record
    }
}

/// Independent digest computation for manifests.
pub fn sha256(bytes: &[u8]) -> String {
    use sha2::Digest;
    format!("sha256:{}", hex::encode(sha2::Sha256::digest(bytes)))
}
