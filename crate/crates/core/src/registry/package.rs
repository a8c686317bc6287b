//! Client-side assembly of a publishable model, and an in-process publish
//! that drives the same handshake the REST API exposes.

use std::collections::BTreeMap;

use serde_json::Value;

use super::error::RegistryError;
use super::records::{ManifestFile, UploadTicket, VersionRecord, Visibility};
use super::service::Registry;
use crate::blob::SignedUploadUrl;
use crate::digest::BlobDigest;
use crate::metadata::{canonical_dependencies, parse_metadata, ModelMetadata};
use crate::runner::bundle::{BundleKind, BundleManifest, FileEntry, MANIFEST_FILE};
use crate::runner::fixture::{FixtureHandlerSpec, FixtureSet, FIXTURE_FILE};

/// Metadata plus every bundle file, including a generated `bundle.json`.
#[derive(Debug, Clone)]
pub struct PublishPackage {
    pub metadata: Value,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl PublishPackage {
    /// A fixture bundle: one declarative handler per step, in step order.
    pub fn fixture(metadata: &ModelMetadata, handlers: Vec<(String, FixtureHandlerSpec)>) -> Self {
        let names = handlers.iter().map(|(n, _)| n.clone()).collect();
        let set = FixtureSet {
            handlers: handlers.into_iter().collect(),
        };
        let mut files = BTreeMap::new();
        files.insert(FIXTURE_FILE.to_string(), set.to_bytes());
        Self::assemble(metadata, BundleKind::Fixture, names, files)
    }

    /// An sdk-code bundle with arbitrary files; `handlers[k]` names step `k`.
    pub fn sdk_code(metadata: &ModelMetadata, handlers: Vec<String>, files: BTreeMap<String, Vec<u8>>) -> Self {
        Self::assemble(metadata, BundleKind::SdkCode, handlers, files)
    }

    fn assemble(
        metadata: &ModelMetadata,
        kind: BundleKind,
        handlers: Vec<String>,
        mut files: BTreeMap<String, Vec<u8>>,
    ) -> Self {
        let manifest = BundleManifest {
            kind,
            handlers,
            dependencies: canonical_dependencies(&metadata.dependencies),
            files: files
                .iter()
                .map(|(path, bytes)| FileEntry {
                    path: path.clone(),
                    digest: BlobDigest::of(bytes),
                })
                .collect(),
        };
        files.insert(MANIFEST_FILE.to_string(), manifest.to_bytes());
        PublishPackage {
            metadata: metadata.to_json(),
            files,
        }
    }

    /// Adds or replaces a file and regenerates `bundle.json`.
    pub fn with_file(mut self, path: &str, bytes: impl Into<Vec<u8>>) -> Self {
        let manifest_bytes = self.files.remove(MANIFEST_FILE).expect("package has a manifest");
        let mut manifest = BundleManifest::parse(&manifest_bytes).expect("generated manifest parses");
        let bytes = bytes.into();
        manifest.files.retain(|f| f.path != path);
        manifest.files.push(FileEntry {
            path: path.to_string(),
            digest: BlobDigest::of(&bytes),
        });
        manifest.files.sort();
        self.files.insert(path.to_string(), bytes);
        self.files.insert(MANIFEST_FILE.to_string(), manifest.to_bytes());
        self
    }

    pub fn manifest_files(&self) -> Vec<ManifestFile> {
        self.files
            .iter()
            .map(|(path, bytes)| ManifestFile {
                path: path.clone(),
                digest: BlobDigest::of(bytes),
                size: bytes.len() as u64,
            })
            .collect()
    }

    pub fn parsed_metadata(&self) -> ModelMetadata {
        parse_metadata(self.metadata.to_string().as_bytes()).expect("package metadata is valid")
    }
}

impl Registry {
    /// Runs begin, manifest, uploads and finalize in-process.
    pub fn publish_package(
        &self,
        api_key: &str,
        slug: &str,
        label: &str,
        visibility: Option<Visibility>,
        package: &PublishPackage,
    ) -> Result<VersionRecord, RegistryError> {
        let begin = self.begin_publish(api_key, slug, label, visibility)?;
        let manifest = self.submit_manifest(&begin.token, &package.metadata, &package.manifest_files())?;
        for ticket in &manifest.uploads {
            if let UploadTicket::Upload { path, url, .. } = ticket {
                let url = SignedUploadUrl::parse(url)
                    .ok_or_else(|| RegistryError::Storage(format!("unparseable upload URL for `{path}`")))?;
                self.blobs().receive_upload(&url, &package.files[path])?;
            }
        }
        self.finalize_publish(&begin.token)
    }
}
