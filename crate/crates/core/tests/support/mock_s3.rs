//! In-process S3 stand-in: path-style bucket, SigV4 checked on every request,
//! conditional put, ranged GET, paginated ListObjectsV2.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use brc_lake::objectstore::sigv4::{sha256_hex, sign_request_v4, Credentials};
use brc_lake::objectstore::{content_md5, S3Config};

pub const BUCKET: &str = "lake";
pub const ACCESS_KEY: &str = "mock-access";
pub const SECRET_KEY: &str = "mock/secret+key";
pub const REGION: &str = "mock-region-1";

#[derive(Default)]
pub struct State {
    pub objects: Mutex<BTreeMap<String, Vec<u8>>>,
    /// Overwrite even with `If-None-Match: *`, like a non-conforming gateway.
    pub ignore_if_none_match: AtomicBool,
    /// Answer this many upcoming requests with 503.
    pub fail_next: AtomicU32,
    pub page_size: AtomicU64,
    pub requests: AtomicU64,
    pub auth_failures: AtomicU64,
}

pub struct MockS3 {
    pub state: Arc<State>,
    pub endpoint: String,
}

impl MockS3 {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind mock s3");
        let endpoint = format!("http://{}", listener.local_addr().unwrap());
        let state = Arc::new(State::default());
        state.page_size.store(3, Ordering::SeqCst);
        let s = state.clone();
        std::thread::spawn(move || {
            for conn in listener.incoming().flatten() {
                let s = s.clone();
                std::thread::spawn(move || {
                    let _ = serve(conn, &s);
                });
            }
        });
        MockS3 { state, endpoint }
    }

    pub fn config(&self) -> S3Config {
        S3Config {
            endpoint: self.endpoint.clone(),
            region: REGION.into(),
            access_key: ACCESS_KEY.into(),
            secret_key: SECRET_KEY.into(),
            bucket: BUCKET.into(),
            path_style: true,
        }
    }

    pub fn env(&self) -> Vec<(String, String)> {
        [
            ("BRC_STORE", "s3"),
            ("BRC_S3_ENDPOINT", self.endpoint.as_str()),
            ("BRC_S3_REGION", REGION),
            ("BRC_S3_ACCESS_KEY", ACCESS_KEY),
            ("BRC_S3_SECRET_KEY", SECRET_KEY),
            ("BRC_S3_BUCKET", BUCKET),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
    }
}

struct Req {
    method: String,
    path: String,
    query: Vec<(String, String)>,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

fn percent_decode(s: &str) -> String {
    let b = s.as_bytes();
    let mut out = Vec::with_capacity(b.len());
    let mut i = 0;
    while i < b.len() {
        if b[i] == b'%' && i + 2 < b.len() {
            if let Ok(v) = u8::from_str_radix(&s[i + 1..i + 3], 16) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(b[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn read_request(r: &mut BufReader<TcpStream>) -> std::io::Result<Option<Req>> {
    let mut line = String::new();
    if r.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let target = parts.next().unwrap_or_default().to_string();
    let mut headers = Vec::new();
    loop {
        let mut h = String::new();
        r.read_line(&mut h)?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            headers.push((k.trim().to_ascii_lowercase(), v.trim().to_string()));
        }
    }
    let len: usize = headers
        .iter()
        .find(|(k, _)| k == "content-length")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    let mut body = vec![0; len];
    r.read_exact(&mut body)?;
    let (path, qs) = target.split_once('?').unwrap_or((&target, ""));
    let query = qs
        .split('&')
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (k, v) = p.split_once('=').unwrap_or((p, ""));
            (percent_decode(k), percent_decode(v))
        })
        .collect();
    Ok(Some(Req {
        method,
        path: percent_decode(path),
        query,
        headers,
        body,
    }))
}

fn header<'a>(req: &'a Req, name: &str) -> Option<&'a str> {
    req.headers.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
}

fn authorized(req: &Req) -> bool {
    let Some(auth) = header(req, "authorization") else { return false };
    let Some(signed) = auth.split("SignedHeaders=").nth(1).and_then(|s| s.split(',').next()) else {
        return false;
    };
    let signed_headers: Vec<(String, String)> = signed
        .split(';')
        .filter_map(|name| header(req, name).map(|v| (name.to_string(), v.to_string())))
        .collect();
    let (Some(ts), Some(payload)) = (header(req, "x-amz-date"), header(req, "x-amz-content-sha256")) else {
        return false;
    };
    if payload != sha256_hex(&req.body) {
        return false;
    }
    let creds = Credentials {
        access_key: ACCESS_KEY.into(),
        secret_key: SECRET_KEY.into(),
        region: REGION.into(),
    };
    sign_request_v4(&req.method, &req.path, &req.query, &signed_headers, payload, &creds, ts) == auth
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn respond(w: &mut TcpStream, status: u16, headers: &[(&str, String)], body: &[u8], head_only: bool) -> std::io::Result<()> {
    let mut out = format!("HTTP/1.1 {status} X\r\nconnection: close\r\n");
    let has_len = headers.iter().any(|(k, _)| *k == "content-length");
    for (k, v) in headers {
        out.push_str(&format!("{k}: {v}\r\n"));
    }
    if !has_len {
        out.push_str(&format!("content-length: {}\r\n", body.len()));
    }
    out.push_str("\r\n");
    w.write_all(out.as_bytes())?;
    if !head_only {
        w.write_all(body)?;
    }
    w.flush()
}

fn serve(conn: TcpStream, state: &State) -> std::io::Result<()> {
    let mut w = conn.try_clone()?;
    let mut r = BufReader::new(conn);
    let Some(req) = read_request(&mut r)? else { return Ok(()) };
    state.requests.fetch_add(1, Ordering::SeqCst);
    if state
        .fail_next
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        return respond(&mut w, 503, &[], b"<Error><Code>SlowDown</Code></Error>", false);
    }
    if !authorized(&req) {
        state.auth_failures.fetch_add(1, Ordering::SeqCst);
        return respond(&mut w, 403, &[], b"<Error><Code>SignatureDoesNotMatch</Code></Error>", false);
    }
    let bucket_root = format!("/{BUCKET}");
    let head_only = req.method == "HEAD";
    if req.path == bucket_root && req.method == "GET" {
        return list(&mut w, state, &req);
    }
    let Some(key) = req.path.strip_prefix(&format!("{bucket_root}/")) else {
        return respond(&mut w, 404, &[], b"<Error><Code>NoSuchBucket</Code></Error>", false);
    };
    let mut objects = state.objects.lock().unwrap();
    match req.method.as_str() {
        "PUT" => {
            if header(&req, "if-none-match") == Some("*")
                && objects.contains_key(key)
                && !state.ignore_if_none_match.load(Ordering::SeqCst)
            {
                return respond(&mut w, 412, &[], b"<Error><Code>PreconditionFailed</Code></Error>", false);
            }
            let etag = format!("\"{}\"", content_md5(&req.body));
            objects.insert(key.to_string(), req.body);
            respond(&mut w, 200, &[("etag", etag)], b"", false)
        }
        "GET" | "HEAD" => {
            let Some(data) = objects.get(key) else {
                return respond(&mut w, 404, &[], b"<Error><Code>NoSuchKey</Code></Error>", head_only);
            };
            let etag = format!("\"{}\"", content_md5(data));
            if let (Some(range), false) = (header(&req, "range"), head_only) {
                let spec = range.trim_start_matches("bytes=");
                let (a, b) = spec.split_once('-').unwrap_or((spec, ""));
                let start: usize = a.parse().unwrap_or(0);
                if start >= data.len() {
                    return respond(&mut w, 416, &[], b"", false);
                }
                let end = b.parse::<usize>().map_or(data.len() - 1, |e| e.min(data.len() - 1));
                return respond(&mut w, 206, &[("etag", etag)], &data[start..=end], false);
            }
            let len = data.len().to_string();
            respond(&mut w, 200, &[("etag", etag), ("content-length", len)], data, head_only)
        }
        "DELETE" => {
            objects.remove(key);
            respond(&mut w, 204, &[], b"", false)
        }
        _ => respond(&mut w, 405, &[], b"", false),
    }
}

fn list(w: &mut TcpStream, state: &State, req: &Req) -> std::io::Result<()> {
    let q = |name: &str| req.query.iter().find(|(k, _)| k == name).map(|(_, v)| v.clone());
    let prefix = q("prefix").unwrap_or_default();
    let after = q("continuation-token");
    let page = state.page_size.load(Ordering::SeqCst) as usize;
    let objects = state.objects.lock().unwrap();
    let matching: Vec<(&String, &Vec<u8>)> = objects
        .iter()
        .filter(|(k, _)| k.starts_with(&prefix))
        .filter(|(k, _)| after.as_ref().is_none_or(|a| k.as_str() > a.as_str()))
        .collect();
    let truncated = matching.len() > page;
    let shown = &matching[..matching.len().min(page)];
    let mut xml = format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<ListBucketResult xmlns=\"http://s3.amazonaws.com/doc/2006-03-01/\"><Name>{BUCKET}</Name><Prefix>{}</Prefix><KeyCount>{}</KeyCount>",
        xml_escape(&prefix),
        shown.len()
    );
    for (k, v) in shown {
        xml.push_str(&format!(
            "<Contents><Key>{}</Key><Size>{}</Size><ETag>&quot;{}&quot;</ETag></Contents>",
            xml_escape(k),
            v.len(),
            content_md5(v)
        ));
    }
    xml.push_str(&format!("<IsTruncated>{truncated}</IsTruncated>"));
    if truncated {
        let last = shown.last().map(|(k, _)| k.as_str()).unwrap_or_default();
        xml.push_str(&format!("<NextContinuationToken>{}</NextContinuationToken>", xml_escape(last)));
    }
    xml.push_str("</ListBucketResult>");
    respond(w, 200, &[("content-type", "application/xml".into())], xml.as_bytes(), false)
}
