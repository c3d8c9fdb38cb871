use std::time::Duration;

use serde_json::{json, Value};

use super::{BackendConfig, BackendError, CompletionBackend};

/// Chat-completion client: POSTs `{model, messages, temperature}` and reads
/// the first choice's message content.
pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    temperature: f64,
    api_key: Option<String>,
}

impl RemoteBackend {
    pub fn new(config: &BackendConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteBackend {
            agent,
            endpoint: config.endpoint.clone(),
            model: config.model.clone(),
            temperature: config.temperature,
            api_key: std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty()),
        }
    }
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        // never print the credential
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<set>"))
            .finish()
    }
}

impl CompletionBackend for RemoteBackend {
    fn send(&self, prompt: &str) -> Result<String, BackendError> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        })
        .to_string();
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send(body).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout,
            other => BackendError::Unreachable(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Status(status));
        }
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| BackendError::Protocol("missing choices[0].message.content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::Gateway;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    /// Serve canned (status, body) responses, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1/chat/completions"), handle)
    }

    #[test]
    fn retries_server_errors_then_succeeds() {
        let ok = json!({"choices": [{"message": {"role": "assistant", "content": "{\"scenario\": \"s\"}"}}]}).to_string();
        let (endpoint, server) = serve(vec![(500, "{}".into()), (500, "{}".into()), (200, ok)]);
        let config = BackendConfig { endpoint, max_retries: 2, backoff_base_ms: 1, timeout_secs: 5.0, ..Default::default() };
        let gw = Gateway::new(Arc::new(RemoteBackend::new(&config)), config);
        let c = gw.complete("hello").unwrap();
        assert_eq!(c.attempts, 3);
        assert_eq!(c.raw, "{\"scenario\": \"s\"}");
        let bodies = server.join().unwrap();
        let sent: Value = serde_json::from_str(&bodies[2]).unwrap();
        assert_eq!(sent["messages"][0]["content"], "hello");
        assert_eq!(sent["messages"][0]["role"], "user");
        assert_eq!(sent["temperature"], 0.0);
    }

    #[test]
    fn unreachable_endpoint_exhausts() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let config = BackendConfig {
            endpoint: format!("http://{addr}/"),
            max_retries: 1,
            backoff_base_ms: 1,
            timeout_secs: 2.0,
            ..Default::default()
        };
        let gw = Gateway::new(Arc::new(RemoteBackend::new(&config)), config);
        assert!(matches!(gw.complete("x"), Err(crate::llm::GatewayError::Exhausted { attempts: 2, .. })));
    }
}
