# Static version; bump on release.
version = '0.1.0'
short_version = '0.1.0'
