//! Password commitments and sealed boxes.
//!
//! A commitment is `MD5(len(password) as u32 BE || password || text)` and can
//! only be compared, never reversed. A [`SealedBox`] is AES-128-CBC with
//! PKCS#7 padding followed by an MD5 tag over `key || iv || ciphertext`.

mod aes;
pub mod md5;

use std::fmt;

use thiserror::Error;

pub use self::aes::Aes128;
pub use self::md5::{md5, Md5};
use crate::wire::Reader;

pub const KEY_LEN: usize = 16;
pub const IV_LEN: usize = 16;
pub const TAG_LEN: usize = 16;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 16]);

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({self})")
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

/// Hash used for commitments and box tags. Swappable without touching callers.
pub trait DigestAlgorithm {
    fn digest_parts(&self, parts: &[&[u8]]) -> Digest;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Md5Digest;

impl DigestAlgorithm for Md5Digest {
    fn digest_parts(&self, parts: &[&[u8]]) -> Digest {
        let mut h = Md5::new();
        parts.iter().for_each(|p| h.update(p));
        Digest(h.finalize())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("password must not be empty")]
    EmptyPassword,
    #[error("plaintext must not be empty")]
    EmptyPlaintext,
    #[error("box sealed under key {box_key}, opened with key {given}")]
    KeyMismatch { box_key: u16, given: u16 },
    #[error("integrity tag mismatch")]
    IntegrityFailure,
    #[error("bad padding")]
    BadPadding,
    #[error("malformed sealed box")]
    Malformed,
}

pub fn commit(password: &[u8], secret_text: &[u8]) -> Result<Digest, CryptoError> {
    commit_with(&Md5Digest, password, secret_text)
}

pub fn commit_with(
    alg: &impl DigestAlgorithm,
    password: &[u8],
    secret_text: &[u8],
) -> Result<Digest, CryptoError> {
    if password.is_empty() {
        return Err(CryptoError::EmptyPassword);
    }
    let len = (password.len() as u32).to_be_bytes();
    Ok(alg.digest_parts(&[&len, password, secret_text]))
}

/// Byte equality that always inspects all 16 bytes.
pub fn verify_commitment(a: &Digest, b: &Digest) -> bool {
    a.0.iter().zip(b.0.iter()).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    pub key_id: u16,
    bytes: [u8; KEY_LEN],
}

impl SecretKey {
    pub fn new(key_id: u16, bytes: [u8; KEY_LEN]) -> Self {
        SecretKey { key_id, bytes }
    }

    pub fn bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretKey").field("key_id", &self.key_id).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SealedBox {
    pub key_id: u16,
    pub iv: [u8; IV_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedBox {
    /// `key_id || iv || ciphertext_len (u32) || ciphertext || tag`
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.key_id.to_be_bytes());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(2 + IV_LEN + 4 + self.ciphertext.len() + TAG_LEN);
        self.write(&mut out);
        out
    }

    pub(crate) fn read(r: &mut Reader<'_>) -> Option<SealedBox> {
        let key_id = r.u16()?;
        let iv = r.array()?;
        let len = r.u32()? as usize;
        let ciphertext = r.take(len)?.to_vec();
        let tag = r.array()?;
        Some(SealedBox { key_id, iv, ciphertext, tag })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SealedBox, CryptoError> {
        let mut r = Reader::new(bytes);
        let sealed = SealedBox::read(&mut r).ok_or(CryptoError::Malformed)?;
        if r.remaining() != 0 {
            return Err(CryptoError::Malformed);
        }
        Ok(sealed)
    }
}

fn box_tag(key: &SecretKey, iv: &[u8; IV_LEN], ciphertext: &[u8]) -> Digest {
    Md5Digest.digest_parts(&[&key.bytes, iv, ciphertext])
}

pub fn seal(key: &SecretKey, iv: [u8; IV_LEN], plaintext: &[u8]) -> Result<SealedBox, CryptoError> {
    if plaintext.is_empty() {
        return Err(CryptoError::EmptyPlaintext);
    }
    let cipher = Aes128::new(&key.bytes);
    let pad = aes::BLOCK - plaintext.len() % aes::BLOCK;
    let mut data = Vec::with_capacity(plaintext.len() + pad);
    data.extend_from_slice(plaintext);
    data.resize(plaintext.len() + pad, pad as u8);

    let mut prev = iv;
    for chunk in data.chunks_exact_mut(aes::BLOCK) {
        let mut block = [0u8; aes::BLOCK];
        for (b, (p, c)) in block.iter_mut().zip(chunk.iter().zip(prev)) {
            *b = p ^ c;
        }
        cipher.encrypt_block(&mut block);
        chunk.copy_from_slice(&block);
        prev = block;
    }
    let tag = box_tag(key, &iv, &data).0;
    Ok(SealedBox { key_id: key.key_id, iv, ciphertext: data, tag })
}

pub fn open(key: &SecretKey, sealed: &SealedBox) -> Result<Vec<u8>, CryptoError> {
    if sealed.key_id != key.key_id {
        return Err(CryptoError::KeyMismatch { box_key: sealed.key_id, given: key.key_id });
    }
    let expected = box_tag(key, &sealed.iv, &sealed.ciphertext);
    if !verify_commitment(&expected, &Digest(sealed.tag)) {
        return Err(CryptoError::IntegrityFailure);
    }
    let ct = &sealed.ciphertext;
    if ct.is_empty() || !ct.len().is_multiple_of(aes::BLOCK) {
        return Err(CryptoError::BadPadding);
    }

    let cipher = Aes128::new(&key.bytes);
    let mut out = Vec::with_capacity(ct.len());
    let mut prev = sealed.iv;
    for chunk in ct.chunks_exact(aes::BLOCK) {
        let mut block: [u8; aes::BLOCK] = chunk.try_into().unwrap();
        cipher.decrypt_block(&mut block);
        out.extend(block.iter().zip(prev).map(|(b, p)| b ^ p));
        prev = chunk.try_into().unwrap();
    }
    let pad = *out.last().unwrap() as usize;
    if pad == 0 || pad > aes::BLOCK || out[out.len() - pad..].iter().any(|&b| b as usize != pad) {
        return Err(CryptoError::BadPadding);
    }
    out.truncate(out.len() - pad);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use cbc_oracle::cipher::{block_padding::Pkcs7, BlockEncryptMut, KeyIvInit};
    use proptest::prelude::*;

    fn key(id: u16, fill: u8) -> SecretKey {
        SecretKey::new(id, [fill; 16])
    }

    #[test]
    fn commit_golden_values() {
        // Frozen from Python's hashlib over the length-prefixed bytes.
        assert_eq!(commit(b"abc", b"").unwrap().to_string(), "dd17992972185826ae5a155df794a0de");
        assert_eq!(commit(b"abc", b"x").unwrap().to_string(), "3698af5d9534a5d553a8ce6805273024");
        assert_eq!(commit(b"ab", b"cx").unwrap().to_string(), "69aac562060aa27f5509e0d737e0ce82");
        assert_eq!(commit(b"", b"x"), Err(CryptoError::EmptyPassword));
    }

    #[test]
    fn wrong_password_fails_comparison() {
        let stored = commit(b"correct horse", b"nonce-1").unwrap();
        assert!(verify_commitment(&stored, &commit(b"correct horse", b"nonce-1").unwrap()));
        assert!(!verify_commitment(&stored, &commit(b"battery staple", b"nonce-1").unwrap()));
    }

    #[test]
    fn zero_key_single_block_reference() {
        // Frozen from the `cryptography` package's AES-CBC over the padded input.
        let sealed = seal(&key(0, 0), [0; 16], b"Single block msg").unwrap();
        let expected = "e1f2e6a8cc4359154cbae83f17aa8523345ed5a7a3cc0c87bf6916ad9a67aa3c";
        let got: String = sealed.ciphertext.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn rejects_wrong_key_id_and_empty_plaintext() {
        let sealed = seal(&key(1, 7), [3; 16], b"hello").unwrap();
        assert_eq!(
            open(&key(2, 7), &sealed),
            Err(CryptoError::KeyMismatch { box_key: 1, given: 2 })
        );
        assert_eq!(open(&key(1, 8), &sealed), Err(CryptoError::IntegrityFailure));
        assert_eq!(seal(&key(1, 7), [0; 16], b""), Err(CryptoError::EmptyPlaintext));
    }

    #[test]
    fn bad_padding_under_valid_tag() {
        // A box whose tag is valid but whose plaintext padding is not.
        let k = key(4, 9);
        let mut sealed = seal(&k, [1; 16], &[0x20u8; 16]).unwrap();
        sealed.ciphertext.truncate(16);
        sealed.tag = box_tag(&k, &sealed.iv, &sealed.ciphertext).0;
        assert_eq!(open(&k, &sealed), Err(CryptoError::BadPadding));
    }

    #[test]
    fn serialized_layout() {
        let sealed = seal(&key(0x0102, 1), [0xAA; 16], b"x").unwrap();
        let bytes = sealed.to_bytes();
        assert_eq!(&bytes[..2], &[0x01, 0x02]);
        assert_eq!(&bytes[2..18], &[0xAA; 16]);
        assert_eq!(&bytes[18..22], &16u32.to_be_bytes());
        assert_eq!(bytes.len(), 2 + 16 + 4 + 16 + 16);
        assert_eq!(SealedBox::from_bytes(&bytes).unwrap(), sealed);
        assert_eq!(SealedBox::from_bytes(&bytes[..30]), Err(CryptoError::Malformed));
    }

    proptest! {
        #[test]
        fn cbc_matches_reference(
            k in any::<[u8; 16]>(),
            iv in any::<[u8; 16]>(),
            pt in proptest::collection::vec(any::<u8>(), 1..100),
        ) {
            let sealed = seal(&SecretKey::new(0, k), iv, &pt).unwrap();
            let reference = cbc_oracle::Encryptor::<aes_oracle::Aes128>::new(&k.into(), &iv.into())
                .encrypt_padded_vec_mut::<Pkcs7>(&pt);
            prop_assert_eq!(&sealed.ciphertext, &reference);
            prop_assert_eq!(open(&SecretKey::new(0, k), &sealed).unwrap(), pt);
        }

        #[test]
        fn iv_changes_ciphertext(k in any::<[u8; 16]>(), a in any::<[u8; 16]>(), b in any::<[u8; 16]>()) {
            prop_assume!(a != b);
            let key = SecretKey::new(0, k);
            prop_assert_ne!(seal(&key, a, b"payload").unwrap().ciphertext, seal(&key, b, b"payload").unwrap().ciphertext);
        }

        #[test]
        fn single_bit_tamper_rejected(
            k in any::<[u8; 16]>(),
            iv in any::<[u8; 16]>(),
            pt in proptest::collection::vec(any::<u8>(), 1..40),
            bit in any::<proptest::sample::Index>(),
        ) {
            let key = SecretKey::new(3, k);
            let bytes = seal(&key, iv, &pt).unwrap().to_bytes();
            let mut mutated = bytes.clone();
            let at = bit.index(bytes.len() * 8);
            mutated[at / 8] ^= 1 << (at % 8);
            if let Ok(b) = SealedBox::from_bytes(&mutated) {
                prop_assert!(open(&key, &b).is_err());
            }
        }
    }
}
