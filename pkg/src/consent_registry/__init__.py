"""Top-level package for genai-consent-registry."""
