# Core business logic package
