#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde_json::Value;

pub struct StubRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: Value,
}

/// A one-route HTTP/1.1 JSON server on localhost. Every request is answered
/// by `handler` with a status code and JSON body.
pub struct StubServer {
    pub url: String,
    pub hits: Arc<AtomicUsize>,
    pub requests: Arc<Mutex<Vec<StubRequest>>>,
}

impl StubServer {
    pub fn start<F>(handler: F) -> StubServer
    where
        F: Fn(&StubRequest) -> (u16, Value) + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let requests = Arc::new(Mutex::new(Vec::new()));
        let handler = Arc::new(handler);
        {
            let hits = hits.clone();
            let requests = requests.clone();
            thread::spawn(move || {
                for stream in listener.incoming() {
                    let Ok(mut stream) = stream else { continue };
                    let hits = hits.clone();
                    let requests = requests.clone();
                    let handler = handler.clone();
                    thread::spawn(move || {
                        let mut reader = BufReader::new(stream.try_clone().unwrap());
                        let mut request_line = String::new();
                        if reader.read_line(&mut request_line).is_err() {
                            return;
                        }
                        let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
                        let mut content_length = 0;
                        let mut authorization = None;
                        loop {
                            let mut line = String::new();
                            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                                break;
                            }
                            let line = line.trim_end();
                            if line.is_empty() {
                                break;
                            }
                            if let Some((k, v)) = line.split_once(':') {
                                match k.to_ascii_lowercase().as_str() {
                                    "content-length" => content_length = v.trim().parse().unwrap_or(0),
                                    "authorization" => authorization = Some(v.trim().to_string()),
                                    _ => {}
                                }
                            }
                        }
                        let mut body = vec![0u8; content_length];
                        reader.read_exact(&mut body).unwrap();
                        let req = StubRequest {
                            path,
                            authorization,
                            body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                        };
                        hits.fetch_add(1, Ordering::SeqCst);
                        let (status, reply) = handler(&req);
                        requests.lock().unwrap().push(req);
                        let reply = reply.to_string();
                        let response = format!(
                            "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                            reply.len()
                        );
                        let _ = stream.write_all(response.as_bytes());
                    });
                }
            });
        }
        StubServer { url, hits, requests }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}
