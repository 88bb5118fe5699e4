//! Credentials, coordinator identity pinning, and session tokens.
//!
//! The coordinator owns an ed25519 key pair. Workers and clients carry the
//! SHA-256 fingerprint of its public key, fixed at installation. Before any
//! credential is sent, the caller sends a fresh nonce; the coordinator signs
//! it and returns the signature along with its public key, and the caller
//! checks the key against the pinned fingerprint and then the signature.
//!
//! Session tokens are claims signed by the same key, so a coordinator that
//! restarts from its journal still honours the tokens it issued.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use ed25519_dalek::{Signature, Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use xw_common::{digest, digest_parts, Digest, Timestamp};

use crate::types::Role;

const CHALLENGE_CONTEXT: &[u8] = b"xw-challenge-v1\0";
const TOKEN_CONTEXT: &[u8] = b"xw-token-v1\0";

/// Lifetime of a session token unless configured otherwise.
pub const DEFAULT_TOKEN_LIFETIME: Duration = Duration::from_secs(24 * 3600);

pub const NONCE_LEN: usize = 16;

#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credential {
    pub login: String,
    pub password: String,
    pub role: Role,
}

impl Credential {
    pub fn new(login: impl Into<String>, password: impl Into<String>, role: Role) -> Self {
        Credential {
            login: login.into(),
            password: password.into(),
            role,
        }
    }
}

impl fmt::Debug for Credential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Credential")
            .field("login", &self.login)
            .field("password", &"<redacted>")
            .field("role", &self.role)
            .finish()
    }
}

/// The stored form of a password. Salted with the login.
pub fn password_digest(login: &str, password: &str) -> Digest {
    digest_parts([&b"xw-password\0"[..], login.as_bytes(), b"\0", password.as_bytes()])
}

/// SHA-256 of the coordinator's public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct CoordinatorFingerprint(pub [u8; 32]);

impl CoordinatorFingerprint {
    pub fn of_public_key(public_key: &[u8]) -> Self {
        CoordinatorFingerprint(*digest(public_key).as_bytes())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Debug for CoordinatorFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoordinatorFingerprint({})", self.to_hex())
    }
}

impl fmt::Display for CoordinatorFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for CoordinatorFingerprint {
    type Err = hex::FromHexError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim(), &mut out)?;
        Ok(CoordinatorFingerprint(out))
    }
}

impl Serialize for CoordinatorFingerprint {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for CoordinatorFingerprint {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Checks a challenge answer against the pinned fingerprint.
pub fn verify_challenge(trusted: &CoordinatorFingerprint, nonce: &[u8], public_key: &[u8], signature: &[u8]) -> bool {
    if CoordinatorFingerprint::of_public_key(public_key) != *trusted {
        return false;
    }
    let Ok(pk_bytes) = <[u8; 32]>::try_from(public_key) else {
        return false;
    };
    let Ok(key) = VerifyingKey::from_bytes(&pk_bytes) else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(signature) else {
        return false;
    };
    key.verify(&challenge_message(nonce), &sig).is_ok()
}

fn challenge_message(nonce: &[u8]) -> Vec<u8> {
    [CHALLENGE_CONTEXT, nonce].concat()
}

/// The coordinator's private identity.
#[derive(Clone)]
pub struct CoordinatorIdentity {
    key: SigningKey,
}

impl fmt::Debug for CoordinatorIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoordinatorIdentity")
            .field("fingerprint", &self.fingerprint())
            .finish()
    }
}

impl CoordinatorIdentity {
    pub fn from_seed(seed: [u8; 32]) -> Self {
        CoordinatorIdentity {
            key: SigningKey::from_bytes(&seed),
        }
    }

    pub fn from_hex(seed_hex: &str) -> Result<Self, hex::FromHexError> {
        let mut seed = [0u8; 32];
        hex::decode_to_slice(seed_hex.trim(), &mut seed)?;
        Ok(Self::from_seed(seed))
    }

    pub fn generate() -> Self {
        CoordinatorIdentity {
            key: SigningKey::generate(&mut rand::rngs::OsRng),
        }
    }

    pub fn seed_hex(&self) -> String {
        hex::encode(self.key.to_bytes())
    }

    pub fn public_key(&self) -> [u8; 32] {
        self.key.verifying_key().to_bytes()
    }

    pub fn fingerprint(&self) -> CoordinatorFingerprint {
        CoordinatorFingerprint::of_public_key(&self.public_key())
    }

    pub fn sign_challenge(&self, nonce: &[u8]) -> Vec<u8> {
        self.key.sign(&challenge_message(nonce)).to_bytes().to_vec()
    }

    pub fn issue_token(&self, principal: &str, role: Role, now: Timestamp, lifetime: Duration) -> SessionToken {
        let claims = TokenClaims {
            sub: principal.to_string(),
            role,
            iat: now,
            exp: now + lifetime,
        };
        let claims_json = serde_json::to_vec(&claims).expect("claims serialize");
        let sig = self.key.sign(&[TOKEN_CONTEXT, &claims_json].concat());
        let token = format!(
            "{}.{}",
            URL_SAFE_NO_PAD.encode(&claims_json),
            URL_SAFE_NO_PAD.encode(sig.to_bytes())
        );
        SessionToken {
            token,
            principal: claims.sub,
            role,
            issued_at: claims.iat,
            expires_at: claims.exp,
        }
    }

    /// Checks signature and validity window. Revocation is the caller's job.
    pub fn verify_token(&self, token: &str, now: Timestamp) -> Result<TokenClaims, TokenError> {
        let (claims_b64, sig_b64) = token.split_once('.').ok_or(TokenError::Malformed)?;
        let claims_json = URL_SAFE_NO_PAD.decode(claims_b64).map_err(|_| TokenError::Malformed)?;
        let sig_bytes = URL_SAFE_NO_PAD.decode(sig_b64).map_err(|_| TokenError::Malformed)?;
        let sig = Signature::from_slice(&sig_bytes).map_err(|_| TokenError::Malformed)?;
        self.key
            .verifying_key()
            .verify(&[TOKEN_CONTEXT, &claims_json].concat(), &sig)
            .map_err(|_| TokenError::BadSignature)?;
        let claims: TokenClaims = serde_json::from_slice(&claims_json).map_err(|_| TokenError::Malformed)?;
        if now < claims.iat || now > claims.exp {
            return Err(TokenError::Expired);
        }
        Ok(claims)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenClaims {
    pub sub: String,
    pub role: Role,
    pub iat: Timestamp,
    pub exp: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum TokenError {
    #[error("malformed token")]
    Malformed,
    #[error("token signature invalid")]
    BadSignature,
    #[error("token outside its validity window")]
    Expired,
}

/// A token as held by the caller, with its decoded claims.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionToken {
    pub token: String,
    pub principal: String,
    pub role: Role,
    pub issued_at: Timestamp,
    pub expires_at: Timestamp,
}

impl SessionToken {
    pub fn is_valid_at(&self, now: Timestamp) -> bool {
        self.issued_at <= now && now <= self.expires_at
    }
}
