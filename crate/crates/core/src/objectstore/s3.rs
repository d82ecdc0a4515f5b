use std::ops::Range;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use ureq::http::{Method, Request, Response};
use ureq::{Agent, Body};

use super::sigv4::{self, Credentials, EMPTY_PAYLOAD_SHA256};
use super::{content_md5, ObjectKey, ObjectMeta, ObjectStore, StoreError};

const TRANSIENT_RETRIES: u32 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct S3Config {
    pub endpoint: String,
    pub region: String,
    pub access_key: String,
    pub secret_key: String,
    pub bucket: String,
    #[serde(default = "yes")]
    pub path_style: bool,
}

fn yes() -> bool {
    true
}

/// S3-wire client: path-style addressing, SigV4 on every request.
#[derive(Debug, Clone)]
pub struct S3Store {
    agent: Agent,
    base: String,
    host: String,
    bucket: String,
    creds: Credentials,
}

impl S3Store {
    /// Connects and verifies that the endpoint rejects a second
    /// `If-None-Match: *` put; endpoints that silently overwrite are refused.
    pub fn connect(config: &S3Config) -> Result<Self, StoreError> {
        let store = Self::connect_unchecked(config)?;
        store.probe_conditional_put()?;
        Ok(store)
    }

    pub fn connect_unchecked(config: &S3Config) -> Result<Self, StoreError> {
        let bad = |why: &str| StoreError::BackendUnavailable(format!("endpoint {:?}: {why}", config.endpoint));
        let rest = config
            .endpoint
            .strip_prefix("http://")
            .or_else(|| config.endpoint.strip_prefix("https://"))
            .ok_or_else(|| bad("scheme must be http or https"))?;
        let host = rest.trim_end_matches('/');
        if host.is_empty() || host.contains('/') {
            return Err(bad("expected scheme://host[:port]"));
        }
        if !config.path_style {
            return Err(bad("only path-style addressing is supported"));
        }
        if !super::is_valid_segment(&config.bucket) {
            return Err(bad("invalid bucket name"));
        }
        let agent: Agent = Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(30)))
            .build()
            .into();
        let base = config.endpoint.trim_end_matches('/').to_string();
        Ok(S3Store {
            agent,
            base,
            host: host.to_string(),
            bucket: config.bucket.clone(),
            creds: Credentials {
                access_key: config.access_key.clone(),
                secret_key: config.secret_key.clone(),
                region: config.region.clone(),
            },
        })
    }

    pub fn probe_conditional_put(&self) -> Result<(), StoreError> {
        let key = ObjectKey::new(format!("_probe/{}", uuid::Uuid::new_v4().simple()))?;
        self.put(&key, b"1", true)?;
        let second = self.put(&key, b"2", true);
        let _ = self.delete(&key);
        match second {
            Err(StoreError::PreconditionFailed(_)) => Ok(()),
            Ok(_) => Err(StoreError::UnsafeEndpoint(format!(
                "{} overwrote an existing key despite If-None-Match: *",
                self.base
            ))),
            Err(e) => Err(e),
        }
    }

    fn object_path(&self, key: &ObjectKey) -> String {
        format!("/{}/{}", self.bucket, key.as_str())
    }

    fn send(
        &self,
        method: Method,
        path: &str,
        query: &[(String, String)],
        extra: &[(&str, String)],
        body: Option<&[u8]>,
    ) -> Result<Response<Body>, StoreError> {
        let payload_hash = match body {
            Some(b) => sigv4::sha256_hex(b),
            None => EMPTY_PAYLOAD_SHA256.to_string(),
        };
        let mut attempt = 0;
        loop {
            let ts = chrono::Utc::now().format("%Y%m%dT%H%M%SZ").to_string();
            let mut headers: Vec<(String, String)> = vec![
                ("host".into(), self.host.clone()),
                ("x-amz-content-sha256".into(), payload_hash.clone()),
                ("x-amz-date".into(), ts.clone()),
            ];
            headers.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
            let auth = sigv4::sign_request_v4(method.as_str(), path, query, &headers, &payload_hash, &self.creds, &ts);

            let mut url = format!("{}{}", self.base, sigv4::uri_encode(path, true));
            if !query.is_empty() {
                url.push('?');
                url.push_str(&sigv4::canonical_query(query));
            }
            let mut req = Request::builder().method(method.clone()).uri(&url);
            for (k, v) in headers.iter().filter(|(k, _)| k != "host") {
                req = req.header(k.as_str(), v.as_str());
            }
            req = req.header("authorization", auth);
            let result = match body {
                Some(b) => self.agent.run(req.body(b).map_err(http_err)?),
                None => self.agent.run(req.body(()).map_err(http_err)?),
            };
            let retryable = match &result {
                Ok(resp) => resp.status().is_server_error() || resp.status().as_u16() == 409,
                Err(_) => true,
            };
            if retryable && attempt < TRANSIENT_RETRIES {
                attempt += 1;
                std::thread::sleep(Duration::from_millis(20 << attempt));
                continue;
            }
            return result.map_err(|e| StoreError::BackendUnavailable(e.to_string()));
        }
    }
}

fn http_err(e: ureq::http::Error) -> StoreError {
    StoreError::BackendUnavailable(e.to_string())
}

fn read_body(resp: &mut Response<Body>) -> Result<Vec<u8>, StoreError> {
    resp.body_mut()
        .with_config()
        .limit(u64::MAX)
        .read_to_vec()
        .map_err(|e| StoreError::BackendUnavailable(e.to_string()))
}

fn unexpected(op: &str, key: &str, resp: &mut Response<Body>) -> StoreError {
    let status = resp.status().as_u16();
    let body = read_body(resp).unwrap_or_default();
    let body = String::from_utf8_lossy(&body);
    StoreError::BackendUnavailable(format!("{op} {key}: HTTP {status}: {}", body.trim()))
}

fn header(resp: &Response<Body>, name: &str) -> Option<String> {
    resp.headers().get(name).and_then(|v| v.to_str().ok()).map(str::to_string)
}

impl ObjectStore for S3Store {
    fn put(&self, key: &ObjectKey, bytes: &[u8], if_none_match: bool) -> Result<ObjectMeta, StoreError> {
        let extra: Vec<(&str, String)> = if if_none_match {
            vec![("if-none-match", "*".into())]
        } else {
            vec![]
        };
        let mut resp = self.send(Method::PUT, &self.object_path(key), &[], &extra, Some(bytes))?;
        match resp.status().as_u16() {
            200..=299 => Ok(ObjectMeta {
                key: key.clone(),
                size_bytes: bytes.len() as u64,
                etag: content_md5(bytes),
            }),
            412 => Err(StoreError::PreconditionFailed(key.to_string())),
            _ => Err(unexpected("PUT", key.as_str(), &mut resp)),
        }
    }

    fn get(&self, key: &ObjectKey) -> Result<Vec<u8>, StoreError> {
        let mut resp = self.send(Method::GET, &self.object_path(key), &[], &[], None)?;
        match resp.status().as_u16() {
            200 => read_body(&mut resp),
            404 => Err(StoreError::NotFound(key.to_string())),
            _ => Err(unexpected("GET", key.as_str(), &mut resp)),
        }
    }

    fn get_range(&self, key: &ObjectKey, range: Range<u64>) -> Result<Vec<u8>, StoreError> {
        if range.end <= range.start {
            self.head(key)?;
            return Ok(Vec::new());
        }
        let extra = [("range", format!("bytes={}-{}", range.start, range.end - 1))];
        let mut resp = self.send(Method::GET, &self.object_path(key), &[], &extra, None)?;
        match resp.status().as_u16() {
            206 => read_body(&mut resp),
            // Server ignored Range: slice locally.
            200 => {
                let all = read_body(&mut resp)?;
                let start = (range.start as usize).min(all.len());
                let end = (range.end as usize).min(all.len());
                Ok(all[start..end].to_vec())
            }
            416 => Ok(Vec::new()),
            404 => Err(StoreError::NotFound(key.to_string())),
            _ => Err(unexpected("GET", key.as_str(), &mut resp)),
        }
    }

    fn head(&self, key: &ObjectKey) -> Result<ObjectMeta, StoreError> {
        let mut resp = self.send(Method::HEAD, &self.object_path(key), &[], &[], None)?;
        match resp.status().as_u16() {
            200 => {
                let size_bytes = header(&resp, "content-length")
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| StoreError::BackendUnavailable(format!("HEAD {key}: no content-length")))?;
                let etag = header(&resp, "etag").unwrap_or_default().trim_matches('"').to_ascii_lowercase();
                Ok(ObjectMeta {
                    key: key.clone(),
                    size_bytes,
                    etag,
                })
            }
            404 => Err(StoreError::NotFound(key.to_string())),
            _ => Err(unexpected("HEAD", key.as_str(), &mut resp)),
        }
    }

    fn delete(&self, key: &ObjectKey) -> Result<(), StoreError> {
        let mut resp = self.send(Method::DELETE, &self.object_path(key), &[], &[], None)?;
        match resp.status().as_u16() {
            200..=299 | 404 => Ok(()),
            _ => Err(unexpected("DELETE", key.as_str(), &mut resp)),
        }
    }

    fn list(&self, prefix: &str) -> Result<Vec<ObjectMeta>, StoreError> {
        let mut out = Vec::new();
        let mut token: Option<String> = None;
        loop {
            let mut query = vec![("list-type".to_string(), "2".to_string()), ("prefix".to_string(), prefix.to_string())];
            if let Some(t) = &token {
                query.push(("continuation-token".into(), t.clone()));
            }
            let mut resp = self.send(Method::GET, &format!("/{}", self.bucket), &query, &[], None)?;
            if resp.status().as_u16() != 200 {
                return Err(unexpected("LIST", prefix, &mut resp));
            }
            let body = String::from_utf8(read_body(&mut resp)?)
                .map_err(|_| StoreError::BackendUnavailable("list response is not UTF-8".into()))?;
            let page = parse_list_page(&body)?;
            out.extend(page.objects);
            match page.next_token {
                Some(t) if page.truncated => token = Some(t),
                _ => break,
            }
        }
        out.sort_by(|a, b| a.key.as_str().as_bytes().cmp(b.key.as_str().as_bytes()));
        Ok(out)
    }
}

#[derive(Debug, Default)]
pub(crate) struct ListPage {
    pub objects: Vec<ObjectMeta>,
    pub truncated: bool,
    pub next_token: Option<String>,
}

fn xml_unescape(s: &str) -> String {
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&apos;", "'")
        .replace("&#34;", "\"")
        .replace("&amp;", "&")
}

fn elements<'a>(xml: &'a str, tag: &str) -> Vec<&'a str> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = xml;
    while let Some(i) = rest.find(&open) {
        let after = &rest[i + open.len()..];
        let Some(j) = after.find(&close) else { break };
        out.push(&after[..j]);
        rest = &after[j + close.len()..];
    }
    out
}

fn first(xml: &str, tag: &str) -> Option<String> {
    elements(xml, tag).first().map(|s| xml_unescape(s))
}

/// Minimal ListObjectsV2 response reader: only Contents/Key/Size/ETag,
/// IsTruncated and NextContinuationToken are consulted.
pub(crate) fn parse_list_page(xml: &str) -> Result<ListPage, StoreError> {
    let bad = |why: &str| StoreError::BackendUnavailable(format!("malformed list response: {why}"));
    if !xml.contains("<ListBucketResult") {
        return Err(bad("missing ListBucketResult"));
    }
    let mut page = ListPage {
        truncated: first(xml, "IsTruncated").as_deref() == Some("true"),
        next_token: first(xml, "NextContinuationToken"),
        ..Default::default()
    };
    for c in elements(xml, "Contents") {
        let key = first(c, "Key").ok_or_else(|| bad("Contents without Key"))?;
        let size_bytes = first(c, "Size")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("Contents without Size"))?;
        let etag = first(c, "ETag").unwrap_or_default().trim_matches('"').to_ascii_lowercase();
        page.objects.push(ObjectMeta {
            key: ObjectKey::new(key)?,
            size_bytes,
            etag,
        });
    }
    Ok(page)
}
