"""Three-stage DPG discretization of the Reissner-Mindlin plate."""
