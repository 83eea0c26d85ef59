"""Application version, kept in one place for the CLI and any packaged build."""

APP_VERSION = '0.3.0'
