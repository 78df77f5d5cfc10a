"""Analytic information-gain, covering-number, confidence-width and regret bounds."""
