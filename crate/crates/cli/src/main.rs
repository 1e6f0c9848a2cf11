fn main() {
    println!("mergesim");
}
