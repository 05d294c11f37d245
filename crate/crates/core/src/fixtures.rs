//! Small reference functions shared by tests, benches and the CLI demo.

/// Password check with a bounds-check `if` on lines 7-8 guarding the
/// `strcpy` on line 9. Deleting the check injects a buffer overflow.
pub const PASSWORD_CHECK: &str = "int check_password(char *password) {
    int auth = 0;
    char buf[BUFSIZE];
    int cap;
    cap = sizeof(buf);
    int n = strlen(password);
    if (n >= cap)
        return -1;
    strcpy(buf, password);
    if (strcmp(buf, \"secret\") == 0)
        auth = 1;
    return auth;
}
";

/// `PASSWORD_CHECK` with lines 7-8 removed.
pub const PASSWORD_CHECK_VULNERABLE: &str = "int check_password(char *password) {
    int auth = 0;
    char buf[BUFSIZE];
    int cap;
    cap = sizeof(buf);
    int n = strlen(password);
    strcpy(buf, password);
    if (strcmp(buf, \"secret\") == 0)
        auth = 1;
    return auth;
}
";
