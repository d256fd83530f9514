"""Audits of applicant-ranking models: policy ablations and bootstrap arbitrariness."""

__version__ = "0.1.0"
