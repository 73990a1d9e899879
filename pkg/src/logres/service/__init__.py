"""HTTP/JSON front end for a running node."""
