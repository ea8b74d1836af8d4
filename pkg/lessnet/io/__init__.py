"""Binary tensor files, dataset directories and CSV reports."""
