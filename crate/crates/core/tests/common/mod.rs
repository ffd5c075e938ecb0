pub mod scalar_path;
