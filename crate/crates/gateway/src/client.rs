//! Blocking HTTP client used by the command-line verbs.

use ureq::Agent;

pub struct Client {
    base: String,
    agent: Agent,
}

/// Status and body of a gateway reply.
pub struct Reply {
    pub status: u16,
    pub body: String,
}

impl Client {
    pub fn new(base: &str) -> Client {
        let agent: Agent = Agent::config_builder().http_status_as_error(false).build().into();
        Client { base: base.trim_end_matches('/').to_string(), agent }
    }

    fn url(&self, target: &str) -> String {
        format!("{}{target}", self.base)
    }

    fn finish(result: Result<ureq::http::Response<ureq::Body>, ureq::Error>) -> Result<Reply, String> {
        let mut response = result.map_err(|e| e.to_string())?;
        let status = response.status().as_u16();
        let body = response.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(Reply { status, body })
    }

    pub fn get(&self, target: &str) -> Result<Reply, String> {
        Self::finish(self.agent.get(&self.url(target)).call())
    }

    pub fn post(&self, target: &str, body: &str) -> Result<Reply, String> {
        Self::finish(self.agent.post(&self.url(target)).header("content-type", "application/json").send(body))
    }

    pub fn put(&self, target: &str, body: &str) -> Result<Reply, String> {
        Self::finish(self.agent.put(&self.url(target)).header("content-type", "application/json").send(body))
    }

    pub fn delete(&self, target: &str) -> Result<Reply, String> {
        Self::finish(self.agent.delete(&self.url(target)).call())
    }
}
